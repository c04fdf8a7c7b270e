"""Labeling prompt template (str.format placeholders: _TASK, _ACTION, _THOUGHT, _MEMO)."""

PROMPT_SINGLE_WEB = """You are an AI assistant designed to simulate the model's reasoning process before executing a given action in a gui navigation task.  Given the task instruction, current screenshot, the previous history summary, the current action to be executed and thought, generate a rigorous chain of thought. You must strictly follow these reasoning steps:
(1) Progress Estimation: Interface Comprehension and Progress Estimation
(2) Decision Reasoning: Strategy Formulation
(3) History Summary: Update the history summary according the action you executed

### Output format:
<Progress Estimation>
... (one or two sentence)
</Progress Estimation>
<Decision Reasoning>
... (one or two sentence)
</Decision Reasoning>
<History Summary>
... (one or two sentence)
</History Summary>

###Example Input & Output
Input:
Task Instruction: Find all events taking place in New York City during the month of September.
Current Action: {{'action': CLICK, 'value': 'Apply', 'position':[0.3, 0.66]}}
Previous History Summary: The user first changed the location to New York, then set the start date to September 1, and set the end data to September 30.
Output:
<Progress Estimation>
The user has successfully set the location to New York and selected the date range for September 1-30, but the events displayed are still for March, indicating the need to apply the date filter.
</Progress Estimation>
<Decision Reasoning>
Clicking the 'Apply' button will confirm the selected date range (September 1-30) and refresh the event listings to show only those occurring in New York City during September.
</Decision Reasoning>
<History Summary>
The user changed the location to New York, set the date range to September 1-30, and applied the filters to update the event listings.
</History Summary>

###Input
Task Instruction: {_TASK}
Current Action: {_ACTION}
Thought: {_THOUGHT}
Previous History Summary: {_MEMO}
"""
