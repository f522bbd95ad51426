import sys

from tsprop.cli import main

sys.exit(main())
