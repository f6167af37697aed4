"""Phone-grade RTK: raw GNSS observations, RTCM 3 MSM7, NTRIP and a
double-difference positioning engine, plus a scenario simulator."""

__version__ = "0.1.0"
