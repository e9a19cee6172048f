"""Prompt templates for labeling, data construction, judging, and serving.

Templates are plain string builders over primitives so every caller (and
every test) can reconstruct the exact prompt text. Output formats are
deliberately rigid: labelers answer ``standard_id=label`` lines, judges
answer a single ``C-A=..;Q-A=..;S-A=..;F=..`` line.
"""

from __future__ import annotations

from typing import Sequence

ANSWER_SYSTEM = (
    "You are the official account's assistant. Answer the user's question "
    "using only the reference material provided. Be concise and accurate."
)

JUDGE_FORMAT_LINE = "C-A=<1-5>;Q-A=<1-5>;S-A=<1-5>;F=<1-5>"


def labeling_prompt(standards: Sequence[tuple[str, str, list[str]]]) -> str:
    lines = [
        "Classify the writing style of the author's reply on each standard below.",
        "Answer with one line per standard, formatted exactly as standard_id=label.",
        "",
    ]
    for sid, name, labels in standards:
        lines.append(f"{sid} ({name}): one of {', '.join(labels)}")
    return "\n".join(lines)


def forward_qa_prompt(segment: str) -> str:
    return (
        "Read the article segment below and produce one question a reader "
        "might ask plus its answer, grounded strictly in the segment.\n"
        "Format:\nQ: <question>\nA: <answer>\n\n"
        f"Segment:\n{segment}"
    )


def roles_prompt(domain: str, n_roles: int) -> str:
    return (
        f"The official account covers: {domain}.\n"
        f"Invent {n_roles} realistic user roles who would message this account. "
        "One role per line, no numbering."
    )


def role_questions_prompt(domain: str, role: str, n_questions: int) -> str:
    return (
        f"The official account covers: {domain}.\n"
        f"As the user role '{role}', write {n_questions} domain-relevant questions "
        "you would ask. One question per line, no numbering."
    )


def grounded_answer_prompt(question: str, context: str) -> str:
    return (
        "Answer the question using only the reference material.\n\n"
        f"Reference material:\n{context}\n\nQuestion: {question}"
    )


def rewrite_prompt(
    context: str,
    question: str,
    answer: str,
    standard_labels: Sequence[tuple[str, str, str]],  # (id, name, label)
    exemplars: Sequence[tuple[str, str]],  # (comment, reply)
) -> str:
    lines = [
        "Rewrite the answer below so it matches the target reply style, "
        "preserving every fact. Output only the rewritten answer.",
        "",
        f"Context:\n{context}",
        f"Question: {question}",
        f"Original answer: {answer}",
        "",
        "Target style labels:",
    ]
    for sid, name, label in standard_labels:
        lines.append(f"- {name} ({sid}): {label}")
    if exemplars:
        lines.append("")
        lines.append("Reply examples in the target style:")
        for comment, reply in exemplars:
            lines.append(f"User: {comment}")
            lines.append(f"Author: {reply}")
    return "\n".join(lines)


def judge_prompt(
    context: str,
    question: str,
    answer: str,
    standard_labels: Sequence[tuple[str, str, str]],
) -> str:
    lines = [
        "Rate the answer on four dimensions, each from 1 to 5:",
        "C-A: semantic consistency between the answer and the reference context.",
        "Q-A: how well the answer addresses the core intent of the question.",
        "S-A: adherence to the target style labels.",
        "F: grammaticality and naturalness.",
        f"Reply with exactly one line: {JUDGE_FORMAT_LINE}",
        "",
        f"Context:\n{context}",
        f"Question: {question}",
        "Target style labels:",
    ]
    for sid, name, label in standard_labels:
        lines.append(f"- {name} ({sid}): {label}")
    lines.append(f"Answer:\n{answer}")
    return "\n".join(lines)


def assemble_answer_prompt(
    question: str,
    chunks: Sequence[str],
    exemplars: Sequence[tuple[str, str]] = (),
) -> str:
    """User-message body for the gateway; exemplars only for the prompt baseline."""
    lines = []
    if chunks:
        lines.append("Reference material:")
        for i, chunk in enumerate(chunks, 1):
            lines.append(f"[{i}] {chunk}")
        lines.append("")
    if exemplars:
        lines.append("Reply examples in the author's style:")
        for comment, reply in exemplars:
            lines.append(f"User: {comment}")
            lines.append(f"Author: {reply}")
        lines.append("")
    lines.append(f"Question: {question}")
    return "\n".join(lines)
