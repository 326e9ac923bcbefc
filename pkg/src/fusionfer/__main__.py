import sys

from fusionfer.cli import main

sys.exit(main())
