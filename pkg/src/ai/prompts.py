"""
Prompt templates. Placeholders use the {{$name}} form and are all
substituted by `render`; a leftover placeholder is a programming error.
"""
import re

_PLACEHOLDER = re.compile(r"\{\{\$(\w+)\}\}")


def render(template: str, **values: str) -> str:
    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise KeyError(f"Prompt variable {name!r} not provided")
        return values[name]

    return _PLACEHOLDER.sub(substitute, template)


# ===== Step 1: extraction =====

EXTRACTION_TEMPLATE = """GOAL
{{$goal}}

{{$definitions}}

INSTRUCTIONS
1. Carefully read and analyze the entire <Conversation>. <Conversation> consists of messages, each containing a [message_id] followed by its content.
2. {{$identify_instruction}}
3. Format each value as a phrase that starts with a verb in present tense, regardless of the original tense in the conversation.
4. For the "date" field:
{{$date_instructions}}
5. {{$format_instruction}}
6. Use the exact same [message_id] as in the original message. Do not include pronouns in the value.

Example
<Conversation>
[msg-301] (2024-05-17 Friday) I'm living in Rome now with my girlfriend, Hana. We moved here last summer because she started grad school at Stanford.
[msg-302] (2024-05-17 Friday) I quit my job at Coupang in March. I just didn't see myself growing there anymore.
[msg-303] (2024-05-17 Friday) I'm thinking about switching into UX design. I've always liked the idea of making tech more human-friendly.
[msg-304] (2024-05-17 Friday) My brother Junho lives in Seattle. He's an engineer and always sends me photos of the mountains.
[msg-305] (2024-05-17 Friday) I ate chicken with my friends yesterday.

Answer:
{{$example_answer}}

<Conversation>
{{$conversation}}"""

GOAL_CATEGORIZED = (
    "Analyze the entire provided <Conversation> to identify all statements revealing personal information "
    "about the user. Categorize each piece of information as Factual, Experiential, or Subjective, and output "
    "the results as a single structured JSON object according to the <Final Output JSON Format>."
)

GOAL_FLAT = (
    "Analyze the entire provided <Conversation> to identify all statements revealing personal information "
    "about the user, and output the results as a single structured JSON object according to the "
    "<Final Output JSON Format>."
)

DEFINITIONS_CATEGORIZED = """INFORMATION CATEGORY DEFINITIONS
1.  Factual Information: Objective, verifiable facts about the user's state, attributes, possessions, knowledge, skills, and relationships with others (family, friends, pets, etc.). ('What I am / What I have / Who I know')
    * Keywords: is, am, have, own, live in, work as, know (skill/fact/person), my name/age/job/sister/friend is, etc.
    * Examples: "My name is Alex.", "I live in New York.", "I have a Bachelor's degree in CS.", "I own two bikes.", "Emily is my sister.", "Luna is my cat.", "I know Python."

2.  Experiential Information: Specific events, actions, activities, or interactions experienced by the user over time, often situated in a context. ('What I did / What happened to me')
    * Keywords: went, did, saw, met, visited, learned (an experience), attended, bought (as an event), have been, have visited, have tried, have experienced, last year, yesterday, when I was..., etc.
    * Examples: "I travelled to LA last weekend.", "I've assembled the IKEA bookshelf.", "I've been to Japan twice.", "I have met with the CEO.", "I attended the Imagine Dragons concert."

3.  Subjective Information: The user's internal states, including preferences, habits, opinions, beliefs, goals, plans, feelings, etc. ('What I like / think / want / feel / usually do')
    * Keywords: like, love, hate, prefer, think, believe, feel, want, plan to, hope to, usually, often, my goal is, etc.
    * Examples: "I love spicy food.", "I usually wake up at 7 AM.", "I thought that movie was great.", "My goal is to learn Spanish.", "I want to visit Europe next year.\""""

DEFINITIONS_FLAT = """INFORMATION DEFINITION
Personal Information: Any statement about the user's state, attributes, possessions, relationships, experiences, activities, preferences, opinions, goals, plans, or feelings.
    * Examples: "My name is Alex.", "I travelled to LA last weekend.", "I love spicy food.", "My goal is to learn Spanish.\""""

IDENTIFY_CATEGORIZED = (
    "Identify all specific pieces of information about the user that fall into the Factual, Experiential, "
    "or Subjective categories based on the definitions above."
)

IDENTIFY_FLAT = "Identify all specific pieces of personal information about the user based on the definition above."

DATE_INSTRUCTIONS_TEMPORAL = """    * For ongoing facts or current states, use the date of the message
    * For past events with a specific timeframe mentioned (e.g., "yesterday", "three days ago"), calculate and use the actual date based on the message date
    * For past events mentioned in the conversation, mark as "Before [message-date]"
    * For future plans or intentions, mark as "After [message-date]\""""

DATE_INSTRUCTIONS_VERBATIM = """    * Always use the date of the message exactly as written in the conversation (YYYY-MM-DD)
    * Do not calculate, shift, or qualify the date"""

FORMAT_CATEGORIZED = (
    'Format the output as a single JSON object with three categories: "Factual_Information", '
    '"Experiential_Information", and "Subjective_Information". Use empty lists ([]) for categories with no information.'
)

FORMAT_FLAT = (
    'Format the output as a single JSON object with one list: "Personal_Information". '
    "Use an empty list ([]) if there is no information."
)

EXAMPLE_CATEGORIZED = """{
  "Factual_Information": [
    {
      "key": "current residence",
      "value": "Lives in Rome with girlfriend Hana",
      "message_id": "msg-301",
      "date": "2024-05-17"
    },...
  ],
  "Experiential_Information": [
    {
      "key": "job resignation",
      "value": "Quit job at Coupang in March",
      "message_id": "msg-302",
      "date": "{{$past_date}}"
    },...
  ],
  "Subjective_Information": [
    {
      "key": "career dissatisfaction",
      "value": "Feels no growth potential at Coupang",
      "message_id": "msg-302",
      "date": "{{$past_date}}"
    },...
  ]
}"""

EXAMPLE_FLAT = """{
  "Personal_Information": [
    {
      "key": "current residence",
      "value": "Lives in Rome with girlfriend Hana",
      "message_id": "msg-301",
      "date": "2024-05-17"
    },
    {
      "key": "job resignation",
      "value": "Quit job at Coupang in March",
      "message_id": "msg-302",
      "date": "{{$past_date}}"
    },...
  ]
}"""

CATEGORY_KEYS = {
    "Factual_Information": "factual",
    "Experiential_Information": "experiential",
    "Subjective_Information": "subjective",
}
FLAT_KEY = "Personal_Information"


# ===== Step 2: cross-session reasoning =====

REASONING_TEMPLATE = """You are an AI assistant analyzing memory fragments to generate insights. Your task is to identify patterns and connections from the data provided.

Analyze these fragments and generate insights based on five inference types:
- Extension/Generalization: The process of expanding information from specific cases or situations to broader categories, domains, or patterns. This type of inference derives more general characteristics or tendencies from concrete information.
- Accumulation: The process of identifying behaviors, experiences, or patterns that repeat or persist over time. This type of inference focuses on frequency, consistency, and persistence to infer habitual patterns or significant trends.
- Specification/Refinement: The process of breaking down general information into more detailed and specific aspects. This type of inference decomposes broad concepts or experiences into concrete elements or details.
- Transformation: The process of identifying changes in states, perspectives, emotions, behaviors, etc. over time. This type of inference discerns transitions or developments between previous and current/new states.
- Connection/Implication: The process of identifying relationships, causality, or meaning between seemingly disparate pieces of information. This type of inference discerns connections or conclusions not explicitly mentioned.

Your output should be formatted as a JSON object with an "extended_insight" key containing an array of inference objects. Each inference object should have the following structure:
{
  "inference_type": "one of the five inference types",
  "key": "brief description of the insight",
  "date": "relevant date or date range",
  "value": "detailed description of the insight (12 words or less)"
}

Important instructions:
- You do NOT need to use all five inference types. Select only the inference types that clearly apply to the data.
- Include multiple different inference types when appropriate, but don't force all five types.
- You may use the same inference type multiple times for different insights if appropriate.
- Focus on quality over quantity - provide meaningful insights based on the data.
- Avoid trivial or insignificant insights - focus only on substantive patterns and connections.

<example>
Example:
Below are the memory fragments to analyze:
[tech purchase, 2023-03-05]: Jordan buy new drawing tablet
[software usage, 2023-03-07]: Jordan spend three hours learning Procreate app
[online activity, 2023-03-15]: Jordan create account on digital art community DeviantArt
[social media, 2023-03-22]: Jordan share first digital artwork on Instagram

Output:
{
  "extended_insight": [
    {
      "inference_type": "extension/generalization",
      "key": "skill development approach",
      "date": "2023-03-05 to 2023-03-22",
      "value": "Jordan follows a methodical learning approach with appropriate tools"
    },
    {
      "inference_type": "accumulation",
      "key": "digital art activities",
      "date": "2023-03-05 to 2023-03-22",
      "value": "Jordan engaged in 4 digital art activities within 17 days"
    },
    {
      "inference_type": "specification/refinement",
      "key": "artistic medium",
      "date": "2023-03-22",
      "value": "Jordan uses tablet-based digital illustration with Procreate"
    },
    {
      "inference_type": "transformation",
      "key": "identity shift",
      "date": "Before 2023-03-05 to 2023-03-22",
      "value": "Jordan evolved from art appreciator to digital artist"
    },
    {
      "inference_type": "connection/implication",
      "key": "artistic background",
      "date": "Before 2023-03-05",
      "value": "Jordan likely has previous art experience"
    }
  ]
}
</example>

Below are the memory fragments to analyze:
{{$memory_fragments}}"""


# ===== Inference: answer generation =====

LOCOMO_ANSWER_TEMPLATE = """Based on the context, write an answer in the form of a short phrase for the following question. Answer with exact words from the context whenever possible.

Context:
{{$context}}

Question: {{$question}}

Short Answer:"""

LONGMEMEVAL_ANSWER_TEMPLATE = """You are an intelligent assistant designed to provide concise, accurate answers based on given context. Your task is to analyze the provided information and respond to a specific question with a few words or a short phrase.

Here is the context you should use to inform your answer:

{{$context}}

Now, please consider the following question:

{{$question}}

Instructions:
1. Carefully read and analyze the provided context.
2. Consider the question in relation to the context.
3. Formulate a concise answer based solely on the information given in the context.
4. Respond with a short phrase only. Do not use a full sentence.
5. Do not include any explanations, reasoning, or greetings in your response.
6. Ensure your answer is directly relevant to the question asked.

Your response should provide only the essential information in a brief phrase.

Answer:"""


# ===== Evaluation: LLM-as-a-judge =====

JUDGE_TEMPLATE = """You are an AI evaluator tasked with assessing the accuracy of predicted answers to questions. Your goal is to determine how well the predicted answer aligns with the expected (gold) answer and provide a numerical score.

You will be given the following information:

<question>
{{$question}}
</question>

<gold_answer>
{{$gold_answer}}
</gold_answer>

<predicted_answer>
{{$predicted_answer}}
</predicted_answer>

Instructions:
1. Carefully read the question, gold answer, and predicted answer.
2. Analyze the relationship between the gold answer and the predicted answer.
3. Consider the following criteria:
   - Does the predicted answer address the same topic as the gold answer?
   - For time-related questions, does the predicted answer refer to the same time period, even if the format differs?
   - Is the core information in the predicted answer consistent with the gold answer, even if expressed differently?
4. Assign a score from 0 to 100, where:
   - 0 means the predicted answer is completely unrelated or incorrect
   - 100 means the predicted answer perfectly matches the gold answer
   - Scores in between reflect partial correctness or relevance
5. Output your result as a single integer only. Do not use JSON or any other format.

Important:
- Do not include any examples in your analysis or output.
- Provide only the integer score as your output, with no explanation or formatting.

Score:"""
