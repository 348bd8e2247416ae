"""Internal/external iteration schedules.

An agent may repeat its local update ``n_int`` times against the neighbor
information received at the last exchange before broadcasting again.  The
plain engines are the special case ``Schedule(1, n_iter)``.
"""

from __future__ import annotations

from .bp import BPEngine
from .config import SPEED_OF_LIGHT, NoiseModel, Schedule
from .engine import SlotResult, run_rounds
from .vmp import VMPEngine

__all__ = ["Schedule", "run_slot_scheduled", "make_engine"]


def make_engine(slot, priors: dict, noise: NoiseModel, *, engine: str = "bp", mode: str = "standard",
                nlos_aware: bool = True, c: float = SPEED_OF_LIGHT):
    if engine == "bp":
        return BPEngine(slot, priors, noise, mode=mode, nlos_aware=nlos_aware, c=c)
    if engine == "vmp":
        return VMPEngine(slot, priors, noise, nlos_aware=nlos_aware, c=c)
    raise ValueError(f"unknown engine {engine!r}")


def run_slot_scheduled(slot, priors: dict, noise: NoiseModel, *, engine: str = "bp",
                       schedule: Schedule = Schedule(), mode: str = "standard",
                       nlos_aware: bool = True, c: float = SPEED_OF_LIGHT, node_order=None) -> SlotResult:
    """One slot under ``schedule``.  ``history`` has one entry per external round."""
    eng = make_engine(slot, priors, noise, engine=engine, mode=mode, nlos_aware=nlos_aware, c=c)
    return run_rounds(eng, schedule.n_int, schedule.n_ext, node_order)
