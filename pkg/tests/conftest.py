import os
import sys

# let test modules share fixtures and oracle helpers by importing each other
sys.path.insert(0, os.path.dirname(__file__))
