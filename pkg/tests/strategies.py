"""Hypothesis strategies shared by the protocol and acceptance tests."""

from __future__ import annotations

from hypothesis import strategies as st

from closedloop.domain import (
    Answer,
    DeleteText,
    Enter,
    InputText,
    LongPress,
    OpenApp,
    PressBack,
    PressHome,
    Swipe,
    Tap,
)

coord = st.integers(min_value=-10**6, max_value=10**6)
text = st.text(max_size=40)
nonempty = st.text(min_size=1, max_size=40)

actions = st.one_of(
    st.builds(Tap, coord, coord),
    st.builds(LongPress, coord, coord),
    st.builds(Swipe, coord, coord, coord, coord),
    st.builds(InputText, nonempty),
    st.builds(OpenApp, nonempty),
    st.builds(Answer, text),
    st.just(DeleteText()),
    st.just(Enter()),
    st.just(PressBack()),
    st.just(PressHome()),
)

# Text that looks a little like model output, to push the parsers past the first check.
_fragments = st.sampled_from([
    "Description:", "Thought:", "Plan:", "Reflection:", "```JSON\n", "```", "{", "}", '"Step1"', '"Step2"',
    '"Step3"', ":", ",", '"step"', '"thought"', '"expectation"', '"Tap the X button."', "Pass", "Fail:", "TAP(",
    "INPUT_TEXT(", ")", "1", "-5", '"', "\\", "\n", " ", "No need to replan.", "'", "**", "SWIPE(1,2,3,4)",
])
noisy_text = st.lists(st.one_of(_fragments, st.text(max_size=5)), max_size=30).map("".join)
