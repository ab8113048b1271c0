"""python -m longiflow"""
import sys

from .handlers.cli import main

if __name__ == "__main__":
    sys.exit(main())
