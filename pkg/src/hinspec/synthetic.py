"""Planted-community heterogeneous networks for tests, demos and the bundled fixture.

Authors (type ``A``) belong to hidden communities.  Papers (``P``) are
written mostly by authors of one community and published mostly in that
community's venues (``V``); ``A-P-A`` and ``A-P-V-P-A`` therefore carry the
community signal.  Terms (``T``) and keywords (``K``) attach to authors
uniformly at random, so ``A-T-A`` and ``A-K-A`` project to sparse random
networks with no community structure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .hin import HeterogeneousNetwork, load_hin

USEFUL_METAGRAPHS = ("A-P-A", "A-P-V-P-A")
NOISE_METAGRAPHS = ("A-T-A", "A-K-A")


@dataclass
class PlantedHIN:
    nodes: list[tuple[str, str]]
    edges: list[tuple[str, str, str]]
    labels: dict[str, str]
    metagraphs: tuple[str, ...] = USEFUL_METAGRAPHS + NOISE_METAGRAPHS

    def network(self) -> HeterogeneousNetwork:
        return load_hin(
            ("\t".join(r) for r in self.nodes),
            ("\t".join(r) for r in self.edges),
            labels_source=(f"{v}\t{c}" for v, c in sorted(self.labels.items())),
        )

    def write(self, out_dir) -> dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = {k: os.path.join(out_dir, f"{k}.tsv") for k in ("nodes", "edges", "labels")}
        paths["metagraphs"] = os.path.join(out_dir, "metagraphs.txt")
        with open(paths["nodes"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# vertex_id\ttype\n")
            fh.writelines(f"{v}\t{t}\n" for v, t in self.nodes)
        with open(paths["edges"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# src\tdst\trelation\n")
            fh.writelines(f"{s}\t{d}\t{r}\n" for s, d, r in self.edges)
        with open(paths["labels"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# vertex_id\tclass\n")
            fh.writelines(f"{v}\t{c}\n" for v, c in sorted(self.labels.items()))
        with open(paths["metagraphs"], "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(m + "\n" for m in self.metagraphs)
        return paths


def planted_hin(
    n_authors: int = 800,
    n_communities: int = 4,
    n_papers: int = 1600,
    authors_per_paper: int = 3,
    venues_per_community: int = 2,
    p_in: float = 0.8,
    n_terms: int = 800,
    n_keywords: int = 600,
    attrs_per_author: int = 2,
    seed: int = 0,
) -> PlantedHIN:
    """Sample a planted network.

    Each paper picks a home community; each of its authors and its venue come
    from that community with probability ``p_in`` and uniformly otherwise.
    Every author is guaranteed at least one paper.
    """
    if n_papers < n_authors:
        raise ValueError("need at least as many papers as authors")
    rng = np.random.default_rng(seed)
    comm = np.arange(n_authors) % n_communities
    rng.shuffle(comm)
    by_comm = [np.flatnonzero(comm == c) for c in range(n_communities)]
    n_venues = venues_per_community * n_communities
    w = len(str(max(n_authors, n_papers, n_terms, n_keywords)))

    def a(i):
        return f"a{i:0{w}d}"

    nodes = [(a(i), "A") for i in range(n_authors)]
    nodes += [(f"p{i:0{w}d}", "P") for i in range(n_papers)]
    nodes += [(f"v{i:0{w}d}", "V") for i in range(n_venues)]
    nodes += [(f"t{i:0{w}d}", "T") for i in range(n_terms)]
    nodes += [(f"k{i:0{w}d}", "K") for i in range(n_keywords)]

    edges: list[tuple[str, str, str]] = []
    order = rng.permutation(n_authors)
    for p in range(n_papers):
        pid = f"p{p:0{w}d}"
        # the first papers seed coverage so no author is left without one
        lead = order[p] if p < n_authors else None
        home = comm[lead] if lead is not None else int(rng.integers(n_communities))
        team = {int(lead)} if lead is not None else set()
        while len(team) < authors_per_paper:
            if rng.random() < p_in:
                team.add(int(rng.choice(by_comm[home])))
            else:
                team.add(int(rng.integers(n_authors)))
        for i in sorted(team):
            edges.append((a(i), pid, "writes"))
        if rng.random() < p_in:
            v = home * venues_per_community + int(rng.integers(venues_per_community))
        else:
            v = int(rng.integers(n_venues))
        edges.append((pid, f"v{v:0{w}d}", "published_in"))
    for i in range(n_authors):
        for t in rng.choice(n_terms, size=attrs_per_author, replace=False):
            edges.append((a(i), f"t{int(t):0{w}d}", "uses"))
        for k in rng.choice(n_keywords, size=attrs_per_author, replace=False):
            edges.append((a(i), f"k{int(k):0{w}d}", "tagged"))
    labels = {a(i): f"c{int(comm[i])}" for i in range(n_authors)}
    return PlantedHIN(nodes, edges, labels)
