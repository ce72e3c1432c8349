#!/usr/bin/env python3
"""Writes the frozen SPARQL query files. Literals are spelled out as they
should appear in the query text; type ids are copied from the registry file."""

import pathlib

HERE = pathlib.Path(__file__).parent
REGISTRY = HERE.parents[2] / "crates/core/data/entity_types.tsv"

TEMPLATE = """SELECT ?item ?itemLabel ?itemDescription ?type ?location ?image ?article WHERE {{
  SERVICE wikibase:around {{
    ?item wdt:P625 ?location .
    bd:serviceParam wikibase:center "Point({lng} {lat})"^^geo:wktLiteral .
    bd:serviceParam wikibase:radius "{radius}" .
    bd:serviceParam wikibase:distance ?distance .
  }}
  VALUES ?type {{ {types} }}
  ?item wdt:P31 ?type .
  OPTIONAL {{ ?item wdt:P18 ?image . }}
  OPTIONAL {{
    ?article schema:about ?item ;
             schema:isPartOf <https://en.wikipedia.org/> .
  }}
  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "en" . }}
}}
ORDER BY ASC(?distance)
LIMIT 500
"""

CASES = [
    ("notre_dame", "48.853", "2.349", "1", ["Religious Building"]),
    ("westminster", "51.5007", "-0.1246", "2.5", ["Tower", "Bridge"]),
    ("midtown", "40.7484", "-73.9857", "10", ["Skyscraper"]),
    ("sydney", "-33.8568", "151.2153", "0.5", ["Building", "Tourist Attraction"]),
    ("kyoto", "35.0116", "135.7681", "500", ["Castle", "Religious Building", "Historic Site"]),
]


def registry():
    groups = {}
    for line in REGISTRY.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        group, qid, _ = line.split("\t")
        groups.setdefault(group, []).append(qid)
    return groups


def main():
    groups = registry()
    for name, lat, lng, radius, names in CASES:
        types = " ".join("wd:" + q for g in names for q in groups[g])
        text = TEMPLATE.format(lat=lat, lng=lng, radius=radius, types=types)
        (HERE / f"{name}.rq").write_text(text)
        (HERE / f"{name}.args").write_text(f"{lat}\t{lng}\t{radius}\t{','.join(names)}\n")


if __name__ == "__main__":
    main()
