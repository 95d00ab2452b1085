"""Bundled protocol models."""
from .aloha import AlohaParams, build_aloha
from .csmaca import CsmaCaParams, build_csmaca

__all__ = ["AlohaParams", "CsmaCaParams", "build_aloha", "build_csmaca"]
