"""Fleet-based fault detection with extreme learning machines and adversarial feature alignment."""

__version__ = "0.1.0"
