"""Corpus engineering toolkit for adapting LLMs to low-resource languages.

Subpackages: corpus ingestion and statistics, subword tokenizer
extension, batch translation orchestration, pretraining/finetuning
dataset construction, and a translated multiple-choice benchmark
harness.
"""

__version__ = "0.1.0"
