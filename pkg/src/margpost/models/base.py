"""Shared model-layer types."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

__all__ = ["FullConditional"]


@dataclass(frozen=True)
class FullConditional:
    """Exact full conditional of one block given the rest of a draw.

    ``at`` maps a draw's state (block name -> values, as from
    ``ChainSample.row_state``) to a distribution object exposing ``log_pdf``
    and usually ``sample``. Parameter computation happens once per state, so
    Rao-Blackwell averages pay the sufficient-statistic cost once per reduced
    draw, not once per evaluation point.
    """

    block: str
    at: Callable[[dict], object]
