"""Compression accounting over a relation's current representation."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..snapshot import PageClass


@dataclass
class AttributeRatio:
    name: str
    uncompressed_bytes: int = 0
    compressed_bytes: int = 0
    dictionary_bytes: int = 0

    @property
    def stored_bytes(self) -> int:
        return self.compressed_bytes + self.dictionary_bytes

    @property
    def ratio(self) -> float:
        return self.uncompressed_bytes / self.stored_bytes if self.stored_bytes else 1.0


@dataclass
class CompressionReport:
    relation: str
    attributes: list[AttributeRatio] = field(default_factory=list)

    @property
    def uncompressed_bytes(self) -> int:
        return sum(a.uncompressed_bytes for a in self.attributes)

    @property
    def stored_bytes(self) -> int:
        return sum(a.stored_bytes for a in self.attributes)

    @property
    def ratio(self) -> float:
        return self.uncompressed_bytes / self.stored_bytes if self.stored_bytes else 1.0

    def attribute(self, name: str) -> AttributeRatio:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def csv_rows(self) -> list[tuple]:
        out = []
        for a in self.attributes:
            rid = f"{self.relation}.{a.name}"
            out.append(("compression", rid, "uncompressed_bytes", a.uncompressed_bytes))
            out.append(("compression", rid, "stored_bytes", a.stored_bytes))
            out.append(("compression", rid, "ratio", f"{a.ratio:.4f}"))
        out.append(("compression", self.relation, "uncompressed_bytes", self.uncompressed_bytes))
        out.append(("compression", self.relation, "stored_bytes", self.stored_bytes))
        out.append(("compression", self.relation, "ratio", f"{self.ratio:.4f}"))
        return out


def report_compression(engine, relation: str) -> CompressionReport:
    """Per-attribute and total ratio: uncompressed / (stored + dictionary bytes).

    Uncompressed size counts every stored slot at the attribute's fixed width.
    A dictionary is attributed to its attribute once any vector references it.
    """
    rel = engine.relation(relation)
    rep = CompressionReport(relation)
    for a, attr in enumerate(rel.schema.attributes):
        ar = AttributeRatio(attr.name)
        keyed = False
        for part in rel.partitions:
            for chunk in part.chunks:
                vec = chunk.vectors[a]
                ar.uncompressed_bytes += chunk.count * attr.type.width
                if vec.page_class is PageClass.HUGE:
                    ar.compressed_bytes += vec.stored_bytes()
                else:
                    ar.compressed_bytes += vec.stored_bytes(chunk.count)
                keyed = keyed or vec.keyed
        if keyed:
            ar.dictionary_bytes = rel.dictionaries[a].nbytes()
        rep.attributes.append(ar)
    return rep
