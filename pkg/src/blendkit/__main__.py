import sys

from blendkit.cli import main

sys.exit(main())
