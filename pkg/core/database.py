from sqlalchemy.pool import StaticPool
from sqlalchemy_utils import database_exists, create_database
from sqlmodel import create_engine, SQLModel, Session
from .config import settings


def make_engine(url: str, echo: bool = False):
    """SQLite connections are used from the request threadpool; in-memory databases share one connection."""
    kwargs = {}
    if url.startswith("sqlite"):
        kwargs["connect_args"] = {"check_same_thread": False}
        if url in ("sqlite://", "sqlite:///:memory:"):
            kwargs["poolclass"] = StaticPool
    return create_engine(url, echo=echo, **kwargs)

engine = make_engine(settings.DATABASE_URL, settings.DB_ECHO)

def get_session():
    with Session(engine) as session:
        yield session

# Create the prediction store, and the database itself on server backends
def init_db(db_engine=None):
    db_engine = db_engine or engine
    if not database_exists(db_engine.url):
        create_database(db_engine.url)
    SQLModel.metadata.create_all(db_engine)
