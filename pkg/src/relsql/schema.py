"""Database schema structures: tables, typed columns, keys.

The special "*" column (Spider convention) is a pointable column attached
to no table; it never participates in key relationships.
"""

from __future__ import annotations

from dataclasses import dataclass, field

COLUMN_TYPES = ("number", "text", "time", "boolean", "others")


class SchemaError(ValueError):
    pass


@dataclass
class Table:
    name_tokens: list[str]
    orig_name: str = ""

    def __post_init__(self):
        if not self.name_tokens:
            raise SchemaError("table with empty name")
        if not self.orig_name:
            self.orig_name = "_".join(self.name_tokens)


@dataclass
class Column:
    name_tokens: list[str]
    type_token: str
    table_index: int | None  # None only for the "*" column
    orig_name: str = ""

    def __post_init__(self):
        if not self.name_tokens:
            raise SchemaError("column with empty name")
        if self.type_token not in COLUMN_TYPES:
            raise SchemaError(f"unknown column type {self.type_token!r}")
        if not self.orig_name:
            self.orig_name = "_".join(self.name_tokens)

    @property
    def is_star(self) -> bool:
        return self.table_index is None


@dataclass
class Schema:
    id: str
    tables: list[Table]
    columns: list[Column]
    primary_keys: set[int] = field(default_factory=set)
    foreign_keys: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n_cols, n_tabs = len(self.columns), len(self.tables)
        for i, col in enumerate(self.columns):
            if col.is_star:
                if col.name_tokens != ["*"]:
                    raise SchemaError(f"{self.id}: column {i} has no table but is not '*'")
            elif not 0 <= col.table_index < n_tabs:
                raise SchemaError(f"{self.id}: column {i} has table index {col.table_index}")
        for pk in self.primary_keys:
            if not 0 <= pk < n_cols:
                raise SchemaError(f"{self.id}: primary key index {pk} out of range")
            if self.columns[pk].is_star:
                raise SchemaError(f"{self.id}: '*' cannot be a primary key")
        seen = set()
        for src, tgt in self.foreign_keys:
            for end in (src, tgt):
                if not 0 <= end < n_cols:
                    raise SchemaError(f"{self.id}: foreign key index {end} out of range")
                if self.columns[end].is_star:
                    raise SchemaError(f"{self.id}: '*' cannot appear in a foreign key")
            if (src, tgt) in seen:
                raise SchemaError(f"{self.id}: duplicate foreign key {(src, tgt)}")
            if (tgt, src) in seen:
                # column-level labels come in F/R pairs; a mutual reference
                # between two columns would make both directions F
                raise SchemaError(f"{self.id}: mutual foreign keys between columns {src}, {tgt}")
            seen.add((src, tgt))

    def table_columns(self, table_index: int) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.table_index == table_index]

    def column_label(self, index: int) -> str:
        col = self.columns[index]
        if col.is_star:
            return "*"
        return f"{self.tables[col.table_index].orig_name}.{col.orig_name}"
