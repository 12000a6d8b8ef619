"""visedit: compile natural-language edit instructions into inspectable
visual programs and execute them over pluggable providers, with a
condition-flexible diffusion-guidance core at desk scale."""

__version__ = "0.1.0"
