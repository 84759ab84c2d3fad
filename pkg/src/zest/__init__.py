"""REST-style request/reply protocol over messaging sockets, with
macaroon access control and observable resources."""

from .codec import (
    Code,
    ContentFormat,
    MalformedMessage,
    Message,
    Option,
    decode_message,
    encode_message,
)
from .tokens import Macaroon, mint_scoped, serialize, verify

__all__ = [
    "Code",
    "ContentFormat",
    "MalformedMessage",
    "Message",
    "Option",
    "decode_message",
    "encode_message",
    "Macaroon",
    "mint_scoped",
    "serialize",
    "verify",
]

__version__ = "0.1.0"
