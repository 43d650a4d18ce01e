# Amenity Space - spatial consumption complexity toolkit
__version__ = "1.0.0"
