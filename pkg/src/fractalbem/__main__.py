"""``python -m fractalbem`` entry point."""
from .cli import main

main()
