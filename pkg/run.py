from flask.cli import FlaskGroup

from app import create_app

# python run.py gen|decompose|bench ...  (и стандартното `run` за HTTP API)
cli = FlaskGroup(create_app=create_app)

if __name__ == "__main__":
    cli()
