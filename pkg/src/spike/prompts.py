"""Prompt templates.

The scenario, RAG-answering, and judging templates are kept verbatim; only
``{dataset}``, ``{question}``/``{document}`` and the judge slots are filled.
"""
from __future__ import annotations

TEXT_CONTENT_MARKER = "[Text Content]"
TRUNCATION_MARKER = "\n[... document truncated ...]"
DEFAULT_MAX_DOC_CHARS = 24_000

TEACHER_3STEP = """[Task Description]
You are an advanced language model specializing in knowledge extraction and user need modeling. Your task is to extract hypothetical user scenarios from a given {dataset} document, ensuring that the generated information needs reflect the document's overall insights and knowledge, rather than isolated details.

**Step 1: Document Analysis**:
Summarize the key points of the document in a structured manner. This step should not be a direct extraction but should synthesize the document's core concepts, key arguments, and insights, avoiding specific code snippets, variable names, or minor details.

Content:
- Main Topic: Briefly describe the primary subject of the document
- Key Aspects: Summarize the core concepts, insights, or knowledge presented

**Step 2: Generate Possible Information Needs**:
Based on the document analysis, generate a diverse set of possible information needs that can be satisfied by the document, ensuring that they **focus on high-level insights, generalizable knowledge, or core principles conveyed by the document rather than specific implementation details (e.g., function names, variable names, or isolated sections)**.

Guidelines:
- The information needs must align with the document's main message and core knowledge, not minor details.
- Focus on concepts, reasoning, and insights rather than localized facts.
- Ensure that they **focus on high-level insights, generalizable knowledge, or core principles conveyed by the document rather than specific implementation details (e.g., function names, variable names, or isolated sections)**.
- Ensure that the needs **capture different aspects of the document's knowledge** rather than concentrating on a single part.

Format:
- Each information need is started with "A User wants to know"
- Generate a python list of information needs. (e.g. ["information need 1", "information need 2", "information need 3"])


**Step 3: Generate Explanation for Each Information Need**:
For each information need, explain how the document fulfills that need, ensuring that explanations are generalized and conceptual rather than overly detailed. Avoid focusing on function names, variable names, or specific lines unless absolutely necessary for clarity.

Format:
- Generate JSON format with the following components:
- Key: information need
- Value: explanation for the information need


"""

GENERATOR_INSTRUCTION = """[Task Description]
You are an advanced language model specializing in knowledge extraction and user need modeling. Your task is to extract hypothetical user scenarios from a given {dataset} document, ensuring that the generated information needs reflect the document's overall insights and knowledge, rather than isolated details.

Content:
- Main Topic: Briefly describe the primary subject of the document
- Key Aspects: Summarize the core concepts, insights, or knowledge presented
- Information Needs: Generate a diverse set of possible information needs that can be satisfied by the document
- Explanation: Explain how the document fulfills that need, ensuring that explanations are generalized and conceptual rather than overly detailed.

Format:
- Generate JSON format


"""

PSEUDO_QUERY = """[Task Description]
Read the following {dataset} document and write exactly three different search queries that a user could issue for which this document would be a useful result.

Format:
- Output exactly three lines, one query per line
- Do not number the queries and do not add any other text


"""

SUMMARY = """[Task Description]
Read the following {dataset} document and write a concise summary of its content in a single paragraph.

Format:
- Output only the summary paragraph


"""

RAG_ANSWER = """Problem:
{question}

Document:
{document}

Based on the provided documents, write an answer to the problem.
"""

RAG_JUDGE = """———- PROBLEM START ———-
{problem}
———- PROBLEM END ———-
———- STUDENT ANSWER START ———-
{predicted}
———- STUDENT ANSWER END ———-
———- REFERENCE ANSWER START ———-
{gold}
———- REFERENCE ANSWER END ———-
Criteria:
0 - The student's answer is completely irrelevant or blank.
10 - The student's answer addresses about 10% of the reference content.
20 - The student's answer addresses about 20% of the reference content.
30 - The student's answer addresses about 30% of the reference content.
40 - The student's answer addresses about 40% of the reference content.
50 - The student's answer addresses about 50% of the reference content.
60 - The student's answer addresses about 60% of the reference content.
70 - The student's answer addresses about 70% of the reference content.
80 - The student's answer addresses about 80% of the reference content.
90 - The student's answer addresses about 90% of the reference content.
100 - The student's answer addresses about 100% of the reference content.
Use the following format to give a score:
REASON:
Describe why you give a specific score
SCORE:
The score you give, e.g., 60
Do not say anything after the score
"""

TEMPLATES = {
    "teacher_3step": TEACHER_3STEP,
    "generator_instruction": GENERATOR_INSTRUCTION,
    "pseudo_query": PSEUDO_QUERY,
    "summary": SUMMARY,
}
