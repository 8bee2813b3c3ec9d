import sys

from soundseg.cli import main

sys.exit(main())
