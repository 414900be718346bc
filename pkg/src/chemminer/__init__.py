"""Chemical reaction mining from scientific papers.

A document is decoded into a geometric model, tables and figures are
detected, coreference labels ("1b") are collected into a per-paper
dictionary by two agents, and a third agent extracts reaction records
whose labels are then replaced by full molecule names.
"""

from .agents import (RawReaction, build_document_text, chunk_text, merge_reactions, run_agent1_page,
                     run_agent2_assets, run_agent3_document)
from .backends import BackendError, ExtractionBackend, RemoteBackend, RuleBackend
from .config import DEFAULT_TOLERANCES, Tolerances
from .corefdict import (CorefDictionary, CorefEntry, InsertOutcome, MoleculeName, Provenance, is_label,
                        normalize_molecule, validate_label)
from .docmodel import (BBox, Block, Char, EmbeddedImage, Line, Page, Span, StructuredDocument, VectorSegment,
                       load_document, page_text, reading_order, save_document, validate_document)
from .evaluation import (FieldCounts, GroundTruthRecord, MetricRow, build_report, compute_metrics,
                         count_fields, match_records)
from .figures import FigureAsset, RenderSpec, extract_figures
from .ingest import ConversionError, OcrStatus, SectionKind, classify_section, convert_pdf, ocr_quality_gate
from .parsing import ResponseParseError, parse_backend_response
from .pipeline import PipelineConfig, run_pipeline
from .reactions import ReactionRecord, emit, load_records, substitute
from .tables import (TableGrid, detect_alignment_grids, detect_tables, detect_vector_grids, fuse_and_fill,
                     merge_cross_page)

__version__ = "0.1.0"

__all__ = [
    "BBox", "BackendError", "Block", "Char", "ConversionError", "CorefDictionary", "CorefEntry",
    "DEFAULT_TOLERANCES", "EmbeddedImage", "ExtractionBackend", "FieldCounts", "FigureAsset",
    "GroundTruthRecord", "InsertOutcome", "Line", "MetricRow", "MoleculeName", "OcrStatus", "Page",
    "PipelineConfig", "Provenance", "RawReaction", "ReactionRecord", "RemoteBackend", "RenderSpec",
    "ResponseParseError", "RuleBackend", "SectionKind", "Span", "StructuredDocument", "TableGrid",
    "Tolerances", "VectorSegment", "build_document_text", "build_report", "chunk_text", "classify_section",
    "compute_metrics", "convert_pdf", "count_fields", "detect_alignment_grids", "detect_tables",
    "detect_vector_grids", "emit", "extract_figures", "fuse_and_fill", "is_label", "load_document",
    "load_records", "match_records", "merge_cross_page", "merge_reactions", "normalize_molecule",
    "ocr_quality_gate", "page_text", "parse_backend_response", "reading_order", "run_agent1_page",
    "run_agent2_assets", "run_agent3_document", "run_pipeline", "save_document", "substitute",
    "validate_document", "validate_label",
]
