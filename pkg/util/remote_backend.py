import json
import logging
import os
from typing import Any, Dict, List, Optional

import requests

from models.agent import AgentTranscript, BackendMessage, PromptText, ToolCall
from models.run import AgentSettings
from util.errors import AgentError

logger = logging.getLogger(__name__)


def transcript_messages(transcript: AgentTranscript, prompt: PromptText) -> List[Dict[str, Any]]:
    """
    The conversation so far in chat-completions form: the prompt, then each
    assistant turn followed by one tool message per call.
    """
    messages: List[Dict[str, Any]] = [{"role": "user", "content": prompt.text}]
    for index, step in enumerate(transcript.steps):
        call_ids = [f"call_{index}_{position}" for position in range(len(step.tool_calls))]
        assistant: Dict[str, Any] = {"role": "assistant", "content": step.agent_message}
        if step.tool_calls:
            assistant["tool_calls"] = [
                {
                    "id": call_id,
                    "type": "function",
                    "function": {"name": call.tool_name.value, "arguments": json.dumps(call.arguments)},
                }
                for call_id, call in zip(call_ids, step.tool_calls)
            ]
        messages.append(assistant)
        for call_id, result in zip(call_ids, step.tool_results):
            messages.append({"role": "tool", "tool_call_id": call_id, "content": json.dumps(result)})
    return messages


class RemoteBackend:
    """
    Agent backend backed by an OpenAI-compatible chat-completions endpoint.
    Requests are sent with temperature 0.
    """

    def __init__(
        self,
        settings: AgentSettings,
        tool_schemas: List[Dict[str, Any]],
        session: Optional[requests.Session] = None,
        api_key: Optional[str] = None,
    ):
        if not settings.endpoint:
            raise AgentError("remote agent backend needs agent.endpoint")
        self.settings = settings
        self.tool_schemas = tool_schemas
        self.session = session or requests.Session()
        self.api_key = api_key if api_key is not None else os.environ.get(settings.api_key_env, "")

    def next_message(self, transcript: AgentTranscript, prompt: PromptText) -> BackendMessage:
        payload = {
            "model": self.settings.model,
            "temperature": 0,
            "messages": transcript_messages(transcript, prompt),
            "tools": self.tool_schemas,
        }
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"

        try:
            response = self.session.post(
                self.settings.endpoint, json=payload, headers=headers, timeout=self.settings.timeout_seconds
            )
            response.raise_for_status()
            message = response.json()["choices"][0]["message"]
        except requests.RequestException as e:
            raise AgentError(f"agent endpoint request failed: {e}")
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise AgentError(f"agent endpoint returned an unexpected body: {e}")

        calls = []
        for tool_call in message.get("tool_calls") or []:
            function = tool_call.get("function", {})
            try:
                arguments = json.loads(function.get("arguments") or "{}")
                calls.append(ToolCall(tool_name=function.get("name"), arguments=arguments))
            except ValueError as e:
                raise AgentError(f"agent requested an invalid tool call {function.get('name')!r}: {e}")

        logger.debug("Agent step %d returned %d tool calls", len(transcript.steps) + 1, len(calls))
        return BackendMessage(text=message.get("content") or "", tool_calls=calls)
