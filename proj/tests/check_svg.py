#!/usr/bin/env python3
"""Checks that every fig_*.svg in a directory is well-formed SVG."""
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

NS = "{http://www.w3.org/2000/svg}"
figs = sorted(Path(sys.argv[1]).glob("fig_*.svg"))
if len(figs) != 3:
    sys.exit(f"expected 3 figures, found {len(figs)}")
for fig in figs:
    root = ET.parse(fig).getroot()
    if root.tag != NS + "svg":
        sys.exit(f"{fig}: root element is {root.tag}")
    lines = [e for e in root.iter(NS + "line") if "regression" in e.get("class", "")]
    if len(lines) != 2:
        sys.exit(f"{fig}: expected 2 regression lines, found {len(lines)}")
    if not list(root.iter(NS + "circle")) or not list(root.iter(NS + "rect")):
        sys.exit(f"{fig}: missing markers")
print(f"{len(figs)} figures well-formed")
