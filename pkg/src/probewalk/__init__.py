"""Load-bearing assessment locomotion for quadrupeds on collapsing terrain."""

__version__ = "0.1.0"

LEGS = ("LF", "RF", "LH", "RH")
