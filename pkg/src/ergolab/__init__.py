"""Random walks by diffeomorphisms on tori and spheres: simulation and hypothesis checks."""

__version__ = "0.1.0"
