from sqlalchemy import Column, Integer, String, DateTime, Boolean, Float, Text, ForeignKey, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker
from datetime import datetime
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

Base = declarative_base()


class Run(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    mode = Column(String, nullable=False)
    status = Column(String, default='running')
    exit_code = Column(Integer)
    output_dir = Column(String)
    config_text = Column(Text)
    seed = Column(Integer)
    message = Column(Text)
    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    # Relationships
    lemmas = relationship('LemmaRecord', back_populates='run', cascade='all, delete-orphan')
    iterations = relationship('IterationRecord', back_populates='run', cascade='all, delete-orphan')
    stability_rows = relationship('StabilityRecord', back_populates='run', cascade='all, delete-orphan')

    def __repr__(self):
        return f"<Run(id={self.id}, mode={self.mode}, status={self.status}, exit_code={self.exit_code})>"


class LemmaRecord(Base):
    __tablename__ = 'lemma_verdicts'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    lemma_id = Column(String, nullable=False)
    regime = Column(String)
    lhs = Column(Float)
    rhs = Column(Float)
    verdict = Column(String)
    note = Column(Text)

    run = relationship('Run', back_populates='lemmas')

    def __repr__(self):
        return f"<LemmaRecord(run_id={self.run_id}, lemma_id={self.lemma_id}, verdict={self.verdict})>"


class IterationRecord(Base):
    __tablename__ = 'iterations'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    iteration = Column(Integer, nullable=False)
    residual = Column(Float)
    f_norm = Column(Float)
    scaled = Column(Boolean, default=False)
    wall_time = Column(Float)

    run = relationship('Run', back_populates='iterations')

    def __repr__(self):
        return f"<IterationRecord(run_id={self.run_id}, iteration={self.iteration}, residual={self.residual})>"


class StabilityRecord(Base):
    __tablename__ = 'stability_rows'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    target = Column(String, nullable=False)
    delta = Column(Float, nullable=False)
    f_error = Column(Float)
    u_sup_error = Column(Float)
    valid = Column(Boolean, default=True)

    run = relationship('Run', back_populates='stability_rows')

    def __repr__(self):
        return f"<StabilityRecord(run_id={self.run_id}, target={self.target}, delta={self.delta})>"


def get_database_url():
    """CBF_DATABASE_URL, else PostgreSQL from POSTGRES_* when a host is given, else local SQLite."""
    url = os.getenv('CBF_DATABASE_URL')
    if url:
        return url
    if os.getenv('POSTGRES_HOST'):
        db_user = os.getenv('POSTGRES_USER', 'postgres')
        db_password = os.getenv('POSTGRES_PASSWORD', 'postgres')
        db_host = os.getenv('POSTGRES_HOST')
        db_port = os.getenv('POSTGRES_PORT', '5432')
        db_name = os.getenv('POSTGRES_DB', 'cbf_runs')
        return f"postgresql://{db_user}:{db_password}@{db_host}:{db_port}/{db_name}"
    return 'sqlite:///cbf_runs.db'


def get_engine(url=None):
    return create_engine(url or get_database_url())


def get_session(url=None):
    """Get a database session"""
    engine = get_engine(url)
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine)
    return Session()


def init_db(url=None):
    """Initialize the database"""
    engine = get_engine(url)
    Base.metadata.create_all(engine)
    return engine
