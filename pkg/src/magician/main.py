import logging

import typer

from magician.core.cli import (
    gamma_k,
    generate,
    knapsack_app,
    kunit_app,
    lp_app,
    reproduce,
    root_options,
    simulate,
    ud_app,
)

logger = logging.getLogger(__name__)
app = typer.Typer(no_args_is_help=True)

# Register all commands with the Typer app
app.callback()(root_options)
app.command(name="gamma-k")(gamma_k)
app.add_typer(kunit_app, name="kunit")
app.add_typer(knapsack_app, name="knapsack")
app.add_typer(ud_app, name="ud")
app.add_typer(lp_app, name="lp")
app.command()(simulate)
app.command()(generate)
app.command()(reproduce)


# -----------------------------------------------------
# Entry point
# -----------------------------------------------------
def main():
    """Entry point for the CLI."""
    try:
        app()
    except Exception as e:
        typer.echo(f"❌ Error: {str(e)}", err=True)
        raise typer.Exit(1)


if __name__ == "__main__":
    main()
