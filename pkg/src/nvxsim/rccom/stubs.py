"""Placeholders for transports that would need native libraries."""

from __future__ import annotations


class _Unavailable:
    scheme = ""

    def __init__(self, *args, **kwargs):
        raise NotImplementedError(f"the {self.scheme} transport is not implemented; use mem:// or tcp://")


class EnetChannel(_Unavailable):
    scheme = "enet"


class RdmaChannel(_Unavailable):
    scheme = "rdma"
