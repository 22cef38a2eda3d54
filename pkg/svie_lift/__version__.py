"""svie-lift version"""

VERSION = "0.1.0"

version = VERSION
