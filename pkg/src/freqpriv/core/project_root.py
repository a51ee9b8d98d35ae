from pathlib import Path


def get_project_root() -> Path:
    """
    Return the project root by climbing upward until a folder
    containing known project markers is found.

    Falls back to the current working directory when the package is
    installed outside a checkout (no markers above the module).
    """
    current = Path(__file__).resolve()

    markers = {"config", "src", "requirements.txt", "pyproject.toml"}

    for parent in current.parents:
        if all((parent / m).exists() for m in ("config", "src")):
            return parent

    for parent in current.parents:
        if any((parent / m).exists() for m in markers):
            return parent

    return Path.cwd()
