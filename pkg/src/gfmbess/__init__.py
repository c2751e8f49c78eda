"""Battery-fed grid-forming VSC: coupled AC/DC simulation and DC/DC controller tuning."""

__version__ = "0.1.0"
