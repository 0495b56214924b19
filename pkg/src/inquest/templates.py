"""Prompt catalog and renderer.

Placeholders are upper-case names in braces, e.g. `{PAPER TITLE}`;
rendering is a single-pass substitution so values can safely contain
brace characters. Literal JSON braces in the prompts never collide with
the placeholder syntax because placeholder names are all-caps.
"""

from __future__ import annotations

import re

from .errors import MissingVariable, UnknownTemplate

QUESTION_GENERATOR = "question_generator"
LEAF_ANSWER = "leaf_answer"
INTERMEDIATE_RESOLVE = "intermediate_resolve"
ROOT_FULL_REVIEW = "root_full_review"
ROOT_COMMENTS = "root_comments"
JUDGE = "judge"
ALIGN_MATCH = "align_match"
ALIGN_PAIR = "align_pair"
COMMENT_EXTRACT = "comment_extract"
COMMENT_MERGE = "comment_merge"

# Appended to the resolver prompt after a node's single expansion round
# is spent, so every intermediate question ends with an answer.
FORCED_SYNTHESIS_SUFFIX = (
    "\n\nIMPORTANT: The evidence gathered so far must now be treated as "
    "sufficient. Do not propose any further follow-up questions. Output the "
    'JSON object with "chain_of_thought" and "synthesized_answer" only.'
)

# Appended once when a completion could not be parsed, before giving up.
JSON_REPAIR_SUFFIX = (
    "\n\nYour previous output could not be parsed. Respond with valid JSON "
    "only, exactly in the requested format, with no surrounding prose."
)

_QUESTION_GENERATOR_PROMPT = """\
You are an expert in academic peer review, specializing in decomposing high-level review questions into structured, critical sub-questions that help reviewers thoroughly evaluate a paper. You will receive the metadata of the submitted paper (title, abstract, table of contents) and a parent review question. Your task is to generate sub-questions that are specific, actionable, and focused on distinct aspects of the parent question, following MECE principles (Mutually Exclusive, Collectively Exhaustive).

TASK REQUIREMENTS:

1 Contextual Awareness:

- You are a reviewer tasked with evaluating the paper. Your questions should reflect a critical and analytical perspective, aimed at identifying strengths, weaknesses, and areas that require further clarification or improvement.

- At the root level (Current Depth in Review Tree: 0), generate sub-questions that cover the major aspects of a peer review, such as novelty, quality, clarity, significance, etc.

- At deeper levels, generate increasingly specific sub-questions that probe finer details of the paper's content.

- If the parent question is already sufficiently detailed and does not require further decomposition, return an empty list.

2 Question Quality:

- Ensure sub-questions are:

-- Mutually Independent: No overlap between sub-questions.

-- Collectively Exhaustive: Together, they cover all key aspects of the parent question.

-- Locally Answerable: Try to ensure that sub-questions can be answered by reading fragments of the paper (specific sections, paragraphs, or technical elements), so that the reviewer can focus their attention on specific content of the paper.

-- Paper Specific: Contextualize sub-questions within the paper's research content.

- Generate the minimum number of sub-questions necessary to thoroughly address the parent question, while ensuring that each question is critical, specific, and contributes meaningfully to the evaluation. Avoid generating redundant or overly granular questions unless absolutely necessary.

- Maintain scientific rigor and focus on critical evaluation, avoiding superficial or overly broad questions.

3 Peer-Review Focus:

- Frame questions from the perspective of a reviewer, not the author. For example:
Instead of asking, "Does the author explain the methodology clearly?" ask, "Is the methodology described in sufficient detail to allow for reproducibility?"

4 Question Scope:

- Focus solely on textual components of the paper, excluding figures, tables, or visual elements from consideration.

5 Number of sub-questions:

- Generate up to {QUESTIONS NUM} sub-questions.

- If the parent question is already sufficiently detailed, return empty array.

INPUT:

- Paper Title: {PAPER TITLE}

- Paper Abstract: {PAPER ABSTRACT}

- Paper Table of Contents: {PAPER TOC}

- Current Depth in Review Tree: {NODE DEPTH}

- Parent Question: {PARENT QUESTION}

OUTPUT FORMAT:

A JSON array of strings containing up to {QUESTIONS NUM} sub-questions.

Example: ["Question1", "Question2", "Question3"]

If no further sub-questions are needed, return an empty JSON array: []

Only output the JSON array.
"""

_LEAF_ANSWER_PROMPT = """\
You specialize in providing precise, evidence-based answers to review questions for submitted paper. You operate at the leaf-node level of a peer-review question tree. Your answers will directly support higher-level critique synthesis.

TASK REQUIREMENTS:

1. Only use information explicitly stated in the provided Relevant Context.

2. Avoid making inferences, predictions, or hypotheses that are not directly supported by the text. If the text is ambiguous or incomplete, acknowledge the limitation and refrain from filling gaps with assumptions.

3. Use formal, precise, and objective language. Avoid casual phrasing, exaggeration, or emotional language.

4. Provide Detailed Evidence: For each comment, include specific evidence from the given context (e.g., quotes, section references, or data points) to justify your point.

INPUT:

- Review Question: {QUESTION}

- Relevant Context: {CONTEXT}

OUTPUT FORMAT:

A single string containing only the answer to the review question.

Your final answer:
"""

_INTERMEDIATE_RESOLVE_PROMPT = """\
As an intermediate node in the peer review question tree, your role is to analyze and synthesize answers from sub-questions (child nodes) to determine whether the evidence is sufficient to address the current node's question. Your primary goal is to evaluate the paper from a critical reviewer's perspective, identifying strengths, weaknesses, and potential gaps in the research. Based on the provided sub-questions and answers, you must first determine whether the evidence is sufficient to address the main question. If sufficient, synthesize a critical review segment for your parent node; if insufficient, propose additional questions to deepen the investigation. Your output must bridge lower-level evidence to higher-level evaluations, ensuring the review process is both rigorous and logically structured.

INSTRUCTION:

If the evidence is sufficient to address the main question, follow the "Sufficient Evidence" task requirements and output format.

If the evidence is insufficient to address the main question, follow the "Insufficient Evidence" task requirements and output format.

TASK REQUIREMENTS FOR SUFFICIENT EVIDENCE:

1. Critical Reviewer Perspective: From the perspective of a peer reviewer, not the author. Focus on evaluating the paper's claims, methodology, and conclusions critically. Avoid defending the paper or emphasizing its contributions without sufficient evidence.

2. Input-Bound Synthesis: Use only the provided sub-Q&A pairs. Never reference external knowledge or invent claims.

3. Analytical Depth: Dive deeply into the sub-answers to uncover patterns, contradictions, and gaps. Synthesize insights that go beyond surface-level observations, critically evaluating the strength of evidence and exploring the broader implications of the findings.

4. Critical Thinking: Consider the implications of the sub-answers and how they collectively address the main question. Highlight any significant findings or unresolved issues.

5. Provide Detailed Evidence: For each insight in your synthesized answer, include specific evidence from the sub-Q&A pairs (e.g., quotes, section references, or data points) to justify your point.

6. Chain of Thought: Clearly articulate your reasoning process, showing how you derived your conclusions from the sub-answers. This should include a step-by-step explanation of your thought process.

OUTPUT FORMAT FOR SUFFICIENT EVIDENCE:

A JSON object containing the chain of thought and the synthesized answer.

Use the following JSON schema and ensure proper escaping of special characters (e.g., double quotes, forward/backward slashes, etc):

{
    "chain_of_thought": str,
    "synthesized_answer": str
}

TASK REQUIREMENTS FOR INSUFFICIENT EVIDENCE:

1. Evidence Assessment: If the provided sub-Q&A pairs are insufficient to answer the main question, propose up to {MAX QUESTION NUM} follow-up questions that need to be answered to address the main question adequately.

2. Analytical Depth: Analyze the sub-answers to identify specific areas where the evidence is lacking or contradictory. Determine what additional information is required to address the main question adequately.

3. Chain of Thought: Clearly articulate your reasoning process, showing how you identified the gaps in the evidence and why the proposed follow-up questions are necessary. This should include a step-by-step explanation of your thought process.

OUTPUT FORMAT FOR INSUFFICIENT EVIDENCE:

A JSON object containing the chain of thought and up to {MAX QUESTION NUM} follow-up questions.

Use the following JSON schema and ensure proper escaping of special characters (e.g., double quotes, forward/backward slashes, etc):

{
    "chain_of_thought": str,
    "follow_up_questions": list[str]
}

INPUT:

- Question: {QUESTION}

- Sub-questions and answers: {QUESTIONS AND ANSWERS}

Only output the JSON object.
"""

_ROOT_FULL_REVIEW_PROMPT = """\
You are an expert reviewer tasked with providing a thorough, critical, and constructive review for a scientific paper submitted for publication. A review aims to determine whether a submission will bring sufficient value to the community and contribute new knowledge. You will be given the full paper content and a set of question-answer pairs about the paper, which are obtained through in-depth understanding and analysis of the paper. These Q&A pairs will be very helpful for you to build a high-quality review. Please follow the instructions and requirements provided below:

INSTRUCTIONS

1. Firstly, you should carefully read through the entire paper.

2. Secondly, it's important to use the questions and their corresponding answers as a guiding framework to help you deeply understand the paper and ensure a comprehensive review.

3. Based on the analysis from the first two steps, compose a thorough and comprehensive review.

REQUIREMENTS

1. While the question-answer pairs are important inputs for your analysis, your review should focus on the paper itself and avoid directly mentioning the Q&A pairs. Instead, use the insights from them to inform your review process.

2. In your review, you must cover the following aspects:

- Summary: a concise description of the paper's claims and contributions, free of your own opinions.
- Strengths and weaknesses: originality, quality, clarity, and significance of the work, each assessed critically with supporting evidence from the paper.
- Questions: concrete questions and suggestions the authors should address.
- Soundness: an integer from 1 (poor) to 4 (excellent) for the technical soundness of claims and evidence.
- Presentation: an integer from 1 (poor) to 4 (excellent) for writing and organization quality.
- Contribution: an integer from 1 (poor) to 4 (excellent) for the significance of the contribution.
- Rating: an integer from 1 (strong reject) to 10 (strong accept) as the overall recommendation.
- Confidence: an integer from 1 (educated guess) to 5 (absolutely certain) for your confidence in the assessment.

INPUT

- Paper Content: {PAPER CONTENT}

- Questions and answers: {QUESTIONS AND ANSWERS}

OUTPUT FORMAT

Here is the template for a review format. You must follow this format to output the integrated review results:

**Summary:**

Summary content

**Strengths:**

Strengths result

**Weaknesses:**

Weaknesses result

**Questions:**

Questions result

**Soundness:**

Soundness result

**Presentation:**

Presentation result

**Contribution:**

Contribution result

**Rating:**

Rating result

**Confidence:**

Confidence result

Your final review, do not include any additional commentary:
"""

_ROOT_COMMENTS_PROMPT = """\
You are an expert reviewer tasked with providing feedback comments for a scientific paper. You will receive the full paper content and a set of review question-answer pairs which are obtained through review process with in-depth understanding and analysis of the paper. These review Q&A pairs will be very helpful for you to give accurate and insightful feedback comments. Please follow the instructions below:

INSTRUCTIONS

1. You should first carefully read through the entire paper.

2. It's important to use the review questions and their corresponding answers as reference to guide and enhance your review thinking process. However, if after reading the entire paper you think some viewpoints or insights in the review Q&A pairs to be incorrect or insufficient, please disregard these incorrect ones and refine the insufficient ones with your own expert judgment.

3. Identify weak points of the paper, and write them as feedback comments. For each of your comments, it should:

- Focus on the paper's weaknesses, limitations, potential flaws, and areas for improvement, or raise questions that highlight the need for clarification and further analysis.

- Focus on major comments that are important and have a significant impact on the paper's quality, as opposed to minor comments about things like writing style or grammar.

- Be specific and in-depth, identifying particular gaps or issues unique to this paper rather than making superficial or generic criticisms that could apply to any academic work.

- Be detailed, providing comprehensive context and extensive elaboration on the identified issue, including specific aspects of the methodology, results, or claims, etc that require improvement, explaining why these issues matter, how they impact the paper's validity or contribution, what specific changes would address the concerns, ensuring substantive enough for authors to fully understand both the problem and the path to resolution.

- Provide detailed evidence from the paper (e.g., quotes, section references, or data points) to support your point. For example, if a claim is unsupported, identify the exact statement and explain what evidence is missing; if a methodology is unclear, reference the section and describe what additional details are needed.

INPUT

- Paper Content: {PAPER CONTENT}

- Questions and answers: {QUESTIONS AND ANSWERS}

OUTPUT FORMAT

Write your feedback comments as a JSON list of strings, for example: ["feedback comment1", "feedback comment2"].

Your feedback comments, do not include any additional commentary:
"""

_JUDGE_PROMPT = """\
You are a highly experienced area chair for top-tier academic conferences. Your task is to assess the quality of a review for a given paper based on specific evaluation criteria. You must ensure your assessment is professional, objective, and well-reasoned.

You will receive an academic paper and its associated peer review.

Firstly, take time to thoroughly read and understand both the paper and its review.

Then, analyze and score the quality of the review based on specific criteria outlined below:

1. **Comprehensiveness**: Does the review assess all important dimensions of the paper, including the significance of the research question, innovation and originality, methodological rigor, experimental design and analysis, potential impact on the field, and other key aspects?

2. **Technical Depth**: Does the review demonstrate a thorough understanding of the paper's content and the related research domain? Does it identify subtle yet significant technical issues?

3. **Clarity**: Does the review accurately and clearly identify specific strengths, weaknesses, and unclear aspects of the paper?

4. **Constructiveness**: Is the review constructive and helpful in nature? Can the provided suggestions or insights really help improve the paper?

5. **Specificity**: Is the review focused on particular issues within the given paper, rather than being overly generic or applicable to other papers?

6. **Evidence Support**: Does the review reference specific examples, sections, or data from the paper to substantiate its observations and feedback? Is the referenced content faithful to the original paper?

7. **Consistency**: Is the review internally consistent? Does it contain contradictory viewpoints?

8. **Overall Quality**: Considering all aspects, how would you score the overall quality of the review?

Before assigning any scores, carefully analyze the review against each evaluation criterion, thinking step-by-step.

For each criterion, first provide a concise reason, then assign a score using the following scale:

- 0-2: Severely deficient - Fails to meet basic standards

- 3-4: Below acceptable standards - Major improvements needed

- 5-6: Acceptable - Meets minimum standards but has clear limitations

- 7-8: Good - Exceeds standard expectations with minor limitations

- 9-10: Excellent - Exemplary quality with minimal or no limitations

INPUT:

- Paper Content: {PAPER CONTENT}

- Review to Assess: {REVIEW}

Format your assessment as a JSON object with the following structure:

{
  "Comprehensiveness": {
    "reason": str,
    "score": int
  },

  ...

  "Overall Quality": {
    "reason": str,
    "score": int
  }
}

Only output the final JSON object.
"""

_COMMENT_EXTRACT_PROMPT = """\
Instructions:

A user will give you a scientific paper review, and you must make the list of comments made by the reviewer. Write each specific suggestion or critique that the reviewer makes. Each item in the list should stand alone as a complete comment, so you may need to paraphrase or adjust comments in order to add context and improve clarity. However, you should try to preserve the original wording when possible. Do not reframe comments as reported speech or add attributions. In addition, you should merge similar comments as needed to ensure that each final comment in your list stands on its own as a fully-contextualized comment. For example, a reviewer might give a high-level comment like "Experiments are not convincing" and then elaborate on that comment later with a more detailed explanation of how the experiments are unconvincing; in this case, you should merge the two comments into a single comment with all the details.

Your output should be a JSON object like `{"major": List[str], "minor": List[str]}` where the lists of strings are the lists of review comments. The "major" comments should be the most important ones, typically regarding the impact and novelty of the work, the correctness of main claims, or anything else that the reviewer suggests is an important factor in accepting the work. The "minor" comments should be the ones that are just about small details that aren't crucial for the work, such as style and grammar, minor clarifications, or other things that the reviewer indicates aren't important.

Example output: {"major": ["The evaluation lacks comparisons against strong baselines, so the central performance claims cannot be assessed."], "minor": ["Several figure captions contain typos."]}

Review:

{REVIEW}

Only output the JSON object.
"""

_COMMENT_MERGE_PROMPT = """\
Instructions:

You will receive review comments from multiple reviewers for the same scientific paper. Each reviewer's feedback is structured as a list of important critiques or suggestions about the paper.

Your task is to merge these multiple sets of feedback comments into a single consolidated list that comprehensively represents all the important feedback. When merging, follow these guidelines:

1. If multiple reviewers mention the same issue, combine them into a single comment that preserves all details, ensuring no duplicate comments. If one reviewer provides a more detailed explanation than another on the same point, include the more comprehensive version with all specifics. For example, one reviewer might give a high-level comment like "Experiments are not convincing" while another reviewer raises a similar concern but provides a more detailed explanation like "The experimental setup lacks statistical significance tests and has insufficient sample size." In this case, you should merge these comments into a single comprehensive comment that captures both the general concern and the specific details.

2. If conflicting comments exist between reviewers, preserve all conflicting viewpoints in the final list, do not attempt to resolve contradictions.

3. Try to preserve original wording, voice, and phrasing whenever possible, with minimal rewording only when necessary for clarity or to properly merge similar comments. Do not reframe comments as reported speech or add attributions.

4. Ensure each comment in your final list is fully contextualized and can stand alone as a complete comment.

5. Do not add new critiques or suggestions that weren't present in the original review comments.

Reviewer comments:

{REVIEWER COMMENTS}

Your output should be a single JSON array of strings, where each string is a complete, consolidated comment. Do not include any numbering, bullet points, or other special markers in the output. The format should be:

[
  "First consolidated comment",
  "Second consolidated comment",
  "Third consolidated comment",
  ...
]
"""

_ALIGN_MATCH_PROMPT = """\
You compare peer-review feedback. You will receive two numbered lists of feedback comments about the same scientific paper: a list of generated comments and a list of reference comments written by human reviewers.

Identify every candidate pair of comments that appears to convey the same critique, suggestion, or concern. A generated comment may match several reference comments and vice versa (many-to-many). Include a pair whenever the two comments plausibly address the same underlying issue, even if they differ in wording or level of detail; pairs you propose here will be verified individually in a second pass.

Generated comments:

{GENERATED COMMENTS}

Reference comments:

{REFERENCE COMMENTS}

Output a JSON object of the form:

{
  "matches": [
    {"generated": int, "reference": int}
  ]
}

where each entry gives the zero-based indices of a candidate pair. If no comments match, output {"matches": []}.

Only output the JSON object.
"""

_ALIGN_PAIR_PROMPT = """\
You compare a pair of peer-review feedback comments about the same scientific paper: one generated comment and one reference comment written by a human reviewer. Judge whether they convey substantively the same critique or suggestion.

Assess two things:

1. Relatedness: how closely the two comments address the same underlying issue. Answer with exactly one of: "none", "weak", "medium", "high".

2. Specificity: whether the generated comment is less specific, equally specific, or more specific than the reference comment in identifying concrete details of the paper. Answer with exactly one of: "less", "same", "more".

Generated comment:

{GENERATED COMMENT}

Reference comment:

{REFERENCE COMMENT}

Output a JSON object of the form:

{"relatedness": str, "specificity": str}

Only output the JSON object.
"""

TEMPLATES: dict[str, str] = {
    QUESTION_GENERATOR: _QUESTION_GENERATOR_PROMPT,
    LEAF_ANSWER: _LEAF_ANSWER_PROMPT,
    INTERMEDIATE_RESOLVE: _INTERMEDIATE_RESOLVE_PROMPT,
    ROOT_FULL_REVIEW: _ROOT_FULL_REVIEW_PROMPT,
    ROOT_COMMENTS: _ROOT_COMMENTS_PROMPT,
    JUDGE: _JUDGE_PROMPT,
    ALIGN_MATCH: _ALIGN_MATCH_PROMPT,
    ALIGN_PAIR: _ALIGN_PAIR_PROMPT,
    COMMENT_EXTRACT: _COMMENT_EXTRACT_PROMPT,
    COMMENT_MERGE: _COMMENT_MERGE_PROMPT,
}

TEMPLATE_IDS = frozenset(TEMPLATES)

_PLACEHOLDER_RE = re.compile(r"\{([A-Z][A-Z0-9 ]*)\}")


def placeholders(template_id: str) -> frozenset[str]:
    """Names of the placeholders a template expects."""
    if template_id not in TEMPLATES:
        raise UnknownTemplate(f"no template named {template_id!r}")
    return frozenset(_PLACEHOLDER_RE.findall(TEMPLATES[template_id]))


def render_template(template_id: str, variables: dict[str, str]) -> str:
    """Fill a template; every placeholder must be bound.

    Single-pass and byte-deterministic: identical inputs produce
    identical output, and placeholder-like text inside variable values
    is never re-substituted.
    """
    if template_id not in TEMPLATES:
        raise UnknownTemplate(f"no template named {template_id!r}")

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingVariable(
                f"template {template_id!r} needs variable {name!r}"
            )
        return str(variables[name])

    return _PLACEHOLDER_RE.sub(substitute, TEMPLATES[template_id])
