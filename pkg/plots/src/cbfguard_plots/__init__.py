"""Figure rendering for cbfguard simulation traces."""

__version__ = "0.1.0"
