"""Model access: chat, vision, embeddings and reranking."""

from .core import Description, EntitySummary, Message, ModelGateway, parse_json_reply
from .profiles import OFFLINE_ENV, ModelProfile, ModelProfiles
from .prompts import TEMPLATES, PromptTemplate, render_prompt

__all__ = [
    "Description",
    "EntitySummary",
    "Message",
    "ModelGateway",
    "ModelProfile",
    "ModelProfiles",
    "OFFLINE_ENV",
    "PromptTemplate",
    "TEMPLATES",
    "parse_json_reply",
    "render_prompt",
]
