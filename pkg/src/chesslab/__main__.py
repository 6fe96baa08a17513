import sys

from chesslab.cli import main

sys.exit(main())
