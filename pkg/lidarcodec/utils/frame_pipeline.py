#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Módulo FramePipeline
--------------------
Lectura anticipada de frames en un hilo productor con una cola acotada,
para solapar la E/S de archivos con la codificación. El consumo sigue
siendo secuencial y en orden.
"""

import logging
import queue
import threading
from typing import Callable, Generic, Iterable, Iterator, List, Optional, TypeVar

T = TypeVar("T")
S = TypeVar("S")

MAX_PREFETCH = 4

_DONE = object()


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


class FramePrefetcher(Generic[S, T]):
    """
    Iterador que carga frames por adelantado.

    Ejemplo:
    ```
    with FramePrefetcher(paths, load_point_cloud_file) as frames:
        for cloud in frames:
            encoder.encode(cloud)
    ```
    """

    def __init__(self, sources: Iterable[S], loader: Callable[[S], T], depth: int = MAX_PREFETCH):
        """
        Args:
            sources: Elementos a cargar (rutas, índices...)
            loader: Función de carga de un elemento
            depth: Frames en cola como máximo (1..4)
        """
        if not 1 <= depth <= MAX_PREFETCH:
            raise ValueError(f"La profundidad de precarga debe estar entre 1 y {MAX_PREFETCH}: {depth}")
        self.logger = logging.getLogger("lidarcodec.pipeline")
        self.sources: List[S] = list(sources)
        self.loader = loader
        self.depth = depth
        self._queue: "queue.Queue[object]" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _producer_loop(self) -> None:
        for source in self.sources:
            if self._stop.is_set():
                return
            try:
                item: object = self.loader(source)
            except Exception as e:
                self.logger.error(f"Error al cargar {source}: {str(e)}")
                self._put(_Failure(e))
                return
            if not self._put(item):
                return
        self._put(_DONE)

    def _put(self, item: object) -> bool:
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def start(self) -> "FramePrefetcher[S, T]":
        if self._thread is None:
            self._thread = threading.Thread(target=self._producer_loop, daemon=True, name="FramePrefetchThread")
            self._thread.start()
            self.logger.debug(f"Precarga iniciada: {len(self.sources)} frames, profundidad {self.depth}")
        return self

    def close(self) -> None:
        """Detiene el productor y descarta los frames pendientes."""
        self._stop.set()
        while True:
            try:
                self._queue.get_nowait()
            except queue.Empty:
                break
        if self._thread is not None:
            self._thread.join(timeout=1.0)
            self._thread = None

    def __iter__(self) -> Iterator[T]:
        self.start()
        while True:
            item = self._queue.get()
            if item is _DONE:
                return
            if isinstance(item, _Failure):
                raise item.error
            yield item  # type: ignore[misc]

    def __len__(self) -> int:
        return len(self.sources)

    def __enter__(self) -> "FramePrefetcher[S, T]":
        return self.start()

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()
