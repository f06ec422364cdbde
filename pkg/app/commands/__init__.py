"""
Subcommands. Each module exposes register(subparsers, parents), which adds
its parser and binds handle(args) -> exit code as the handler.
"""
