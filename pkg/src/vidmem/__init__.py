"""Multimodal memory engine for long-video question answering."""

from __future__ import annotations

from .actions import EPISODIC, MEMORY_KINDS, SEMANTIC, VISUAL, Search, Stop, format_mask, parse_mask
from .agent import AgentConfig, AgentTrace, Backends, Memories, answer_question, respond, run
from .core import FrameRef, Segment, TimeRange, TimescaleConfig, parse_range, partition_timeline, tiou
from .episodic import EpisodicMemory, build_episodic, cross_scale_rerank, episodic_retrieve
from .evaluation import EvalItem, EvalReport, ablation_matrix, run_eval
from .graph import KnowledgeGraph, PprParams, Triplet, edge_scores, ppr
from .semantic import SemanticMemory, build_semantic, consolidate, semantic_retrieve
from .visual import VisualMemory, feature_search, index_segment, timestamp_fetch

__version__ = "0.1.0"

__all__ = [
    "EPISODIC",
    "MEMORY_KINDS",
    "SEMANTIC",
    "VISUAL",
    "AgentConfig",
    "AgentTrace",
    "Backends",
    "EpisodicMemory",
    "EvalItem",
    "EvalReport",
    "FrameRef",
    "KnowledgeGraph",
    "Memories",
    "PprParams",
    "Search",
    "Segment",
    "SemanticMemory",
    "Stop",
    "TimeRange",
    "TimescaleConfig",
    "Triplet",
    "VisualMemory",
    "ablation_matrix",
    "answer_question",
    "build_episodic",
    "build_semantic",
    "consolidate",
    "cross_scale_rerank",
    "edge_scores",
    "episodic_retrieve",
    "feature_search",
    "format_mask",
    "index_segment",
    "parse_mask",
    "parse_range",
    "partition_timeline",
    "ppr",
    "respond",
    "run",
    "run_eval",
    "semantic_retrieve",
    "tiou",
    "timestamp_fetch",
]
