"""
Development runner for the amenity space pipeline
"""
import sys

from amenity_space.main import main

if __name__ == "__main__":
    sys.exit(main())
