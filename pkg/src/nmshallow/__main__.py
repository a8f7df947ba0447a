"""Allow ``python -m nmshallow`` as an alias for the ``nmshallow`` command."""
from .cli import main

if __name__ == "__main__":
    main()
