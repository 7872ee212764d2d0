"""
PruneGNN — Run Ledger
Tables recording every pipeline run, its per-algorithm results, and the
threshold-table cells it emitted.
"""

from datetime import datetime

from sqlalchemy import (
    create_engine, Column, Integer, String, Float, Boolean,
    DateTime, Text, ForeignKey, Index
)
from sqlalchemy.orm import declarative_base, sessionmaker, relationship

Base = declarative_base()


class ExperimentRun(Base):
    """One invocation of a pipeline (reproduce, train, eval, ...)."""
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(50), unique=True, nullable=False, index=True)
    command = Column(String(50), nullable=False)      # thresholds, variance, table5, figure4, ...
    config_hash = Column(String(12), nullable=False)
    config_json = Column(Text)
    seed = Column(Integer)
    git_describe = Column(String(100))
    status = Column(String(20), default="RUNNING")    # RUNNING, OK, FAILED
    message = Column(Text)
    output_path = Column(String(500))

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    results = relationship("AlgorithmResult", back_populates="run", cascade="all, delete-orphan")
    thresholds = relationship("ThresholdEntry", back_populates="run", cascade="all, delete-orphan")


class AlgorithmResult(Base):
    """Sum rate of one algorithm on one instance (or one aggregated cell)."""
    __tablename__ = "algorithm_results"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(50), ForeignKey("experiment_runs.run_id"), nullable=False, index=True)
    cell = Column(String(100))                         # e.g. "T=20" or "[2,20]"
    instance_id = Column(Integer)                      # None for aggregated rows
    algorithm = Column(String(50), nullable=False)
    sum_rate = Column(Float)
    normalized = Column(Float)
    time_s = Column(Float)

    run = relationship("ExperimentRun", back_populates="results")

    __table_args__ = (
        Index("ix_result_run_alg", "run_id", "algorithm"),
    )


class ThresholdEntry(Base):
    """One cell of a threshold or variance table."""
    __tablename__ = "threshold_entries"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(50), ForeignKey("experiment_runs.run_id"), nullable=False, index=True)
    kind = Column(String(20), nullable=False)          # distance, neighbour, variance_distance, ...
    intensity = Column(Float)
    path_loss_exponent = Column(Float)
    target_ratio = Column(Float)
    value = Column(Float)
    published_value = Column(Float)
    flagged = Column(Boolean, default=False)
    error = Column(Text)

    run = relationship("ExperimentRun", back_populates="thresholds")


# ── Database Setup ──

def init_db(database_url: str = None):
    """Initialize database and create all tables."""
    from config.settings import DATABASE_URL
    url = database_url or DATABASE_URL
    engine = create_engine(url, echo=False)
    Base.metadata.create_all(engine)
    return engine


def get_session(engine):
    """Get a database session."""
    Session = sessionmaker(bind=engine)
    return Session()
