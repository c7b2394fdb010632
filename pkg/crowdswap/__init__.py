"""Agent-based crowdshipping / crowdsensing simulator with task transfers."""

__version__ = "1.0.0"
