import sys

from twoview.cli import main

sys.exit(main())
