"""Deterministic HTML to plain-text extraction.

Rule set (fixed, no readability heuristics):

* content inside ``script``, ``style``, ``noscript``, ``template``, ``head``,
  ``nav``, ``footer``, ``aside``, ``iframe`` and ``svg`` elements is dropped;
* block-level elements start a new paragraph, ``br`` a new line;
* entity references are decoded, runs of blanks collapse to one space and runs
  of blank lines collapse to one blank line.
"""

from __future__ import annotations

import re
from html.parser import HTMLParser

_DROP_TAGS = {
    "script",
    "style",
    "noscript",
    "template",
    "head",
    "nav",
    "footer",
    "aside",
    "iframe",
    "svg",
}

_BLOCK_TAGS = {
    "address", "article", "blockquote", "div", "dl", "dd", "dt", "fieldset",
    "figure", "figcaption", "form", "h1", "h2", "h3", "h4", "h5", "h6", "hr",
    "li", "main", "ol", "p", "pre", "section", "table", "td", "th", "tr", "ul",
}


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._chunks: list[str] = []
        self._drop_depth = 0

    def handle_starttag(self, tag: str, attrs) -> None:
        if tag in _DROP_TAGS:
            self._drop_depth += 1
        elif tag in _BLOCK_TAGS:
            self._chunks.append("\n\n")
        elif tag == "br":
            self._chunks.append("\n")

    def handle_startendtag(self, tag: str, attrs) -> None:
        if tag == "br":
            self._chunks.append("\n")

    def handle_endtag(self, tag: str) -> None:
        if tag in _DROP_TAGS:
            self._drop_depth = max(0, self._drop_depth - 1)
        elif tag in _BLOCK_TAGS:
            self._chunks.append("\n\n")

    def handle_data(self, data: str) -> None:
        if self._drop_depth == 0 and data:
            self._chunks.append(data)

    def text(self) -> str:
        raw = "".join(self._chunks)
        lines = [re.sub(r"[ \t\r\f\v]+", " ", line).strip() for line in raw.split("\n")]
        collapsed = re.sub(r"\n{3,}", "\n\n", "\n".join(lines))
        return collapsed.strip()


def html_to_text(html: str) -> str:
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    return parser.text()
