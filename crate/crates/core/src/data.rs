//! Relational-table handling: schemas derived from declarative bias
//! declarations, CSV ingestion with missing- and query-cell tracking, the
//! transformation of tables into facts, and the inverse reconstruction.

use std::path::{Path, PathBuf};

use indexmap::{IndexMap, IndexSet};

use crate::dist::Value;
use crate::error::Error;
use crate::syntax::{
    parse_program, sym, AggOp, ArgMode, Atom, AttrKind, BiasDecl, DefClause, DistClause, DistExpr,
    Item, Program, Span, Sym, Term,
};

/// One attribute column of an entity table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttrDef {
    pub name: Sym,
    pub kind: AttrKind,
}

/// An entity table: a key column plus attribute columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTable {
    pub name: Sym,
    pub entity_type: Sym,
    pub attributes: Vec<AttrDef>,
}

/// An associative table joining two entity tables by foreign keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTable {
    pub name: Sym,
    pub from: Sym,
    pub to: Sym,
}

/// The relational schema induced by the type and rand declarations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TableSchema {
    pub entities: Vec<EntityTable>,
    pub links: Vec<LinkTable>,
}

impl TableSchema {
    pub fn entity(&self, name: &str) -> Option<&EntityTable> {
        self.entities.iter().find(|t| t.name.as_ref() == name)
    }

    /// The entity table owning an attribute, with the attribute's column.
    pub fn attribute(&self, attr: &str) -> Option<(&EntityTable, usize)> {
        self.entities.iter().find_map(|t| {
            t.attributes
                .iter()
                .position(|a| a.name.as_ref() == attr)
                .map(|i| (t, i))
        })
    }
}

/// A candidate body shape for one target attribute: an optional aggregation,
/// a chain of link-relation patterns, and the attribute read at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeDecl {
    pub target: Sym,
    pub agg: Option<AggOp>,
    pub links: Vec<(Sym, Vec<ArgMode>)>,
    pub attr: (Sym, ArgMode),
}

/// Parsed and cross-checked declarative bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSpec {
    pub schema: TableSchema,
    pub modes: Vec<ModeDecl>,
    pub rank: Option<Vec<Sym>>,
    types: IndexMap<Sym, Vec<Sym>>,
    rands: IndexMap<Sym, AttrKind>,
}

impl BiasSpec {
    pub fn parse(text: &str) -> Result<BiasSpec, Error> {
        Self::from_program(&parse_program(text)?)
    }

    pub fn from_program(p: &Program) -> Result<BiasSpec, Error> {
        let mut types: IndexMap<Sym, Vec<Sym>> = IndexMap::new();
        let mut rands: IndexMap<Sym, AttrKind> = IndexMap::new();
        let mut rank: Option<Vec<Sym>> = None;
        let mut raw_modes = Vec::new();
        for decl in p.bias_decls() {
            match decl {
                BiasDecl::Type { pred, arg_types, .. } => {
                    if arg_types.len() > 2 {
                        return Err(Error::TypeMismatch(format!(
                            "relation {} must be unary or binary, not {}-ary",
                            pred,
                            arg_types.len()
                        )));
                    }
                    types.insert(pred.clone(), arg_types.clone());
                }
                BiasDecl::Rand { attr, kind, .. } => {
                    rands.insert(attr.clone(), kind.clone());
                }
                BiasDecl::Rank { attrs, .. } => rank = Some(attrs.clone()),
                BiasDecl::Mode { target, agg, links, attr, .. } => raw_modes.push(ModeDecl {
                    target: target.clone(),
                    agg: *agg,
                    links: links.clone(),
                    attr: attr.clone(),
                }),
            }
        }
        for attr in rands.keys() {
            match types.get(attr) {
                Some(args) if args.len() == 1 => {}
                _ => {
                    return Err(Error::UnknownAttribute(format!(
                        "rand declaration for {} has no unary type declaration",
                        attr
                    )))
                }
            }
        }
        if let Some(ranked) = &rank {
            for attr in ranked {
                if !rands.contains_key(attr) {
                    return Err(Error::UnknownAttribute(format!(
                        "rank lists {} which has no rand declaration",
                        attr
                    )));
                }
            }
        }
        let mut schema = TableSchema::default();
        for (pred, args) in &types {
            if args.len() == 1 && !rands.contains_key(pred) {
                schema.entities.push(EntityTable {
                    name: pred.clone(),
                    entity_type: args[0].clone(),
                    attributes: Vec::new(),
                });
            }
        }
        for (attr, kind) in &rands {
            let ty = &types[attr][0];
            let table = schema
                .entities
                .iter_mut()
                .find(|t| t.entity_type == *ty)
                .ok_or_else(|| {
                    Error::UnknownAttribute(format!(
                        "attribute {} ranges over type {} which no entity relation declares",
                        attr, ty
                    ))
                })?;
            table.attributes.push(AttrDef { name: attr.clone(), kind: kind.clone() });
        }
        for (pred, args) in &types {
            if args.len() == 2 {
                let resolve = |ty: &Sym| {
                    schema
                        .entities
                        .iter()
                        .find(|t| t.entity_type == *ty)
                        .map(|t| t.name.clone())
                        .ok_or_else(|| {
                            Error::UnknownAttribute(format!(
                                "link relation {} references type {} which no entity relation declares",
                                pred, ty
                            ))
                        })
                };
                schema.links.push(LinkTable {
                    name: pred.clone(),
                    from: resolve(&args[0])?,
                    to: resolve(&args[1])?,
                });
            }
        }
        let spec = BiasSpec { schema, modes: raw_modes, rank, types, rands };
        for mode in &spec.modes {
            spec.check_mode(mode)?;
        }
        Ok(spec)
    }

    pub fn attr_kind(&self, attr: &Sym) -> Option<&AttrKind> {
        self.rands.get(attr)
    }

    pub fn relation_types(&self, pred: &Sym) -> Option<&[Sym]> {
        self.types.get(pred).map(Vec::as_slice)
    }

    /// Type-checks one mode declaration: every input argument must be
    /// satisfiable by a variable of the matching type introduced earlier in
    /// the pattern (the target's entity variable is available from the start).
    fn check_mode(&self, mode: &ModeDecl) -> Result<(), Error> {
        let fail = |reason: String| {
            Err(Error::ModeType { target: mode.target.to_string(), reason })
        };
        let Some(target_args) = self.types.get(&mode.target) else {
            return fail("target attribute has no type declaration".into());
        };
        if !self.rands.contains_key(&mode.target) {
            return fail("target attribute has no rand declaration".into());
        }
        let mut available: IndexSet<Sym> = IndexSet::new();
        available.insert(target_args[0].clone());
        for (link, pattern) in &mode.links {
            let Some(link_args) = self.types.get(link) else {
                return fail(format!("link relation {} has no type declaration", link));
            };
            if link_args.len() != pattern.len() {
                return fail(format!(
                    "link relation {} has arity {}, pattern has {} modes",
                    link,
                    link_args.len(),
                    pattern.len()
                ));
            }
            for (ty, m) in link_args.iter().zip(pattern) {
                if *m == ArgMode::In && !available.contains(ty) {
                    return fail(format!(
                        "input argument of {} needs a variable of type {} which is not bound",
                        link, ty
                    ));
                }
            }
            for (ty, m) in link_args.iter().zip(pattern) {
                if *m == ArgMode::Out {
                    available.insert(ty.clone());
                }
            }
        }
        let (attr, attr_mode) = &mode.attr;
        let Some(attr_args) = self.types.get(attr) else {
            return fail(format!("attribute {} has no type declaration", attr));
        };
        if !self.rands.contains_key(attr) {
            return fail(format!("attribute {} has no rand declaration", attr));
        }
        if *attr_mode != ArgMode::In {
            return fail(format!("attribute {} must take an input argument", attr));
        }
        if !available.contains(&attr_args[0]) {
            return fail(format!(
                "attribute {} needs a variable of type {} which is not bound",
                attr, attr_args[0]
            ));
        }
        if mode.links.is_empty() && mode.agg.is_some() {
            return fail("aggregation requires at least one link relation".into());
        }
        if !mode.links.is_empty() && mode.agg.is_none() {
            return fail("link relations must be aggregated".into());
        }
        if let Some(op) = mode.agg {
            let numeric = matches!(op, AggOp::Sum | AggOp::Avg | AggOp::Max | AggOp::Min);
            if numeric && matches!(self.rands.get(attr), Some(AttrKind::Discrete(_))) {
                return fail(format!(
                    "aggregation {} needs a continuous attribute, {} is discrete",
                    op.name(),
                    attr
                ));
            }
        }
        Ok(())
    }
}

/// The state of one attribute cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Observed(Value),
    Missing,
    Query,
}

/// Rows of one entity table: keys plus one cell per attribute column.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRows {
    pub name: Sym,
    pub keys: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
}

/// Rows of one associative table.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRows {
    pub name: Sym,
    pub pairs: Vec<(String, String)>,
}

/// A loaded database: schema plus rows for every table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableBundle {
    pub schema: TableSchema,
    pub entities: Vec<EntityRows>,
    pub links: Vec<LinkRows>,
}

/// Addresses one attribute cell by table, row key, and attribute name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub table: Sym,
    pub key: String,
    pub attr: Sym,
}

impl std::fmt::Display for CellRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}].{}", self.table, self.key, self.attr)
    }
}

fn is_key_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn malformed(name: &str, message: String) -> Error {
    Error::Malformed { path: PathBuf::from(format!("{}.csv", name)), message }
}

fn parse_cell(raw: &str, kind: &AttrKind, table: &str, row: usize) -> Result<Cell, Error> {
    let raw = raw.trim();
    match raw {
        "" | "-" => return Ok(Cell::Missing),
        "?" => return Ok(Cell::Query),
        _ => {}
    }
    match kind {
        AttrKind::Continuous => raw
            .parse::<f64>()
            .map(|n| Cell::Observed(Value::Num(n)))
            .map_err(|_| {
                malformed(table, format!("row {}: `{}` is not a number", row, raw))
            }),
        AttrKind::Discrete(labels) => {
            if labels.iter().any(|l| l.as_ref() == raw) {
                Ok(Cell::Observed(Value::Sym(sym(raw))))
            } else {
                Err(malformed(
                    table,
                    format!(
                        "row {}: label `{}` is outside the declared domain [{}]",
                        row,
                        raw,
                        labels.iter().map(|l| l.as_ref()).collect::<Vec<_>>().join(",")
                    ),
                ))
            }
        }
    }
}

fn read_records(name: &str, text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(name, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(name, e.to_string()))?;
        rows.push(record.iter().map(|c| c.to_string()).collect());
    }
    Ok((headers, rows))
}

impl TableBundle {
    /// Builds a bundle from in-memory CSV texts, one per table name.
    pub fn from_csv_strings(
        schema: &TableSchema,
        tables: &IndexMap<Sym, String>,
    ) -> Result<TableBundle, Error> {
        let mut entities = Vec::new();
        for table in &schema.entities {
            let text = tables.get(&table.name).ok_or_else(|| {
                malformed(&table.name, "entity table file is missing".into())
            })?;
            let (headers, rows) = read_records(&table.name, text)?;
            if headers.len() != table.attributes.len() + 1 {
                return Err(malformed(
                    &table.name,
                    format!(
                        "expected a key column and {} attribute columns, found {} columns",
                        table.attributes.len(),
                        headers.len()
                    ),
                ));
            }
            let mut column_of = Vec::with_capacity(table.attributes.len());
            for attr in &table.attributes {
                let pos = headers[1..]
                    .iter()
                    .position(|h| *h == attr.name.as_ref())
                    .ok_or_else(|| {
                        malformed(
                            &table.name,
                            format!("missing column for attribute {}", attr.name),
                        )
                    })?;
                column_of.push(pos + 1);
            }
            let mut keys: Vec<String> = Vec::with_capacity(rows.len());
            let mut seen: IndexSet<String> = IndexSet::new();
            let mut cells = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let key = row[0].trim().to_string();
                if !is_key_ident(&key) {
                    return Err(malformed(
                        &table.name,
                        format!("row {}: key `{}` is not a lowercase identifier", i + 1, key),
                    ));
                }
                if !seen.insert(key.clone()) {
                    return Err(Error::DuplicateKey {
                        table: table.name.to_string(),
                        key,
                    });
                }
                let mut row_cells = Vec::with_capacity(table.attributes.len());
                for (attr, col) in table.attributes.iter().zip(&column_of) {
                    row_cells.push(parse_cell(&row[*col], &attr.kind, &table.name, i + 1)?);
                }
                keys.push(key);
                cells.push(row_cells);
            }
            entities.push(EntityRows { name: table.name.clone(), keys, cells });
        }
        let key_sets: IndexMap<Sym, IndexSet<&String>> = entities
            .iter()
            .map(|e| (e.name.clone(), e.keys.iter().collect()))
            .collect();
        let mut links = Vec::new();
        for table in &schema.links {
            let Some(text) = tables.get(&table.name) else {
                links.push(LinkRows { name: table.name.clone(), pairs: Vec::new() });
                continue;
            };
            let (headers, rows) = read_records(&table.name, text)?;
            if headers.len() != 2 {
                return Err(malformed(
                    &table.name,
                    format!("expected two foreign-key columns, found {}", headers.len()),
                ));
            }
            let mut pairs = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let k1 = row[0].trim().to_string();
                let k2 = row[1].trim().to_string();
                for (k, target) in [(&k1, &table.from), (&k2, &table.to)] {
                    if !key_sets[target].contains(k) {
                        return Err(Error::DanglingForeignKey {
                            table: table.name.to_string(),
                            row: i + 1,
                            value: k.clone(),
                            target: target.to_string(),
                        });
                    }
                }
                pairs.push((k1, k2));
            }
            links.push(LinkRows { name: table.name.clone(), pairs });
        }
        Ok(TableBundle { schema: schema.clone(), entities, links })
    }

    /// Loads `<table>.csv` for every schema table from a directory. A link
    /// table without a file is treated as a derived relation with no rows.
    pub fn load(schema: &TableSchema, dir: &Path) -> Result<TableBundle, Error> {
        let mut tables = IndexMap::new();
        for table in &schema.entities {
            let path = dir.join(format!("{}.csv", table.name));
            tables.insert(table.name.clone(), Error::read_to_string(&path)?);
        }
        for table in &schema.links {
            let path = dir.join(format!("{}.csv", table.name));
            if path.exists() {
                tables.insert(table.name.clone(), Error::read_to_string(&path)?);
            }
        }
        Self::from_csv_strings(schema, &tables)
    }

    /// Serializes the bundle back to per-table CSV texts in canonical column
    /// order.
    pub fn to_csv_strings(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for rows in &self.entities {
            let table = self.schema.entity(&rows.name).unwrap();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec![rows.name.to_string()];
            header.extend(table.attributes.iter().map(|a| a.name.to_string()));
            w.write_record(&header).unwrap();
            for (key, cells) in rows.keys.iter().zip(&rows.cells) {
                let mut record = vec![key.clone()];
                for cell in cells {
                    record.push(match cell {
                        Cell::Observed(v) => v.to_string(),
                        Cell::Missing => "-".to_string(),
                        Cell::Query => "?".to_string(),
                    });
                }
                w.write_record(&record).unwrap();
            }
            let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
            out.push((format!("{}.csv", rows.name), text));
        }
        for rows in &self.links {
            let table = self.schema.links.iter().find(|l| l.name == rows.name).unwrap();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([table.from.as_ref(), table.to.as_ref()]).unwrap();
            for (k1, k2) in &rows.pairs {
                w.write_record([k1, k2]).unwrap();
            }
            let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
            out.push((format!("{}.csv", rows.name), text));
        }
        out
    }

    /// Mutable access to one addressed attribute cell.
    pub fn cell_mut(&mut self, cell: &CellRef) -> Result<&mut Cell, Error> {
        let schema = self.schema.clone();
        let rows = self
            .entities
            .iter_mut()
            .find(|e| e.name == cell.table)
            .ok_or_else(|| {
                Error::UnknownAttribute(format!("unknown entity table {}", cell.table))
            })?;
        let table = schema.entity(&cell.table).unwrap();
        let col = table
            .attributes
            .iter()
            .position(|a| a.name == cell.attr)
            .ok_or_else(|| {
                Error::UnknownAttribute(format!(
                    "table {} has no attribute {}",
                    cell.table, cell.attr
                ))
            })?;
        let row = rows.keys.iter().position(|k| *k == cell.key).ok_or_else(|| {
            Error::UnknownAttribute(format!("table {} has no row {}", cell.table, cell.key))
        })?;
        Ok(&mut rows.cells[row][col])
    }
}

/// Facts and cell lists produced from a table bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub entity_facts: Vec<DefClause>,
    pub link_facts: Vec<DefClause>,
    pub attribute_facts: Vec<DistClause>,
    pub missing: Vec<CellRef>,
    pub query: Vec<CellRef>,
}

impl Transform {
    /// All facts as one program, relational facts first.
    pub fn to_program(&self) -> Program {
        let mut items = Vec::new();
        items.extend(self.entity_facts.iter().cloned().map(Item::Def));
        items.extend(self.link_facts.iter().cloned().map(Item::Def));
        items.extend(self.attribute_facts.iter().cloned().map(Item::Dist));
        Program::new(items)
    }
}

fn fact(pred: &Sym, keys: &[&str]) -> DefClause {
    DefClause {
        head: Atom {
            pred: pred.clone(),
            args: keys.iter().map(|k| Term::Const(sym(k))).collect(),
        },
        body: Vec::new(),
        span: Span::default(),
    }
}

/// Turns a bundle into entity facts, link facts, attribute value facts, and
/// the lists of missing and query cells, in canonical table order.
pub fn transform_tables(bundle: &TableBundle) -> Transform {
    let mut out = Transform {
        entity_facts: Vec::new(),
        link_facts: Vec::new(),
        attribute_facts: Vec::new(),
        missing: Vec::new(),
        query: Vec::new(),
    };
    for rows in &bundle.entities {
        for key in &rows.keys {
            out.entity_facts.push(fact(&rows.name, &[key]));
        }
    }
    for rows in &bundle.links {
        for (k1, k2) in &rows.pairs {
            out.link_facts.push(fact(&rows.name, &[k1, k2]));
        }
    }
    for rows in &bundle.entities {
        let table = bundle.schema.entity(&rows.name).unwrap();
        for (key, cells) in rows.keys.iter().zip(&rows.cells) {
            for (attr, cell) in table.attributes.iter().zip(cells) {
                let cell_ref = CellRef {
                    table: rows.name.clone(),
                    key: key.clone(),
                    attr: attr.name.clone(),
                };
                match cell {
                    Cell::Observed(v) => out.attribute_facts.push(DistClause {
                        head: Atom {
                            pred: attr.name.clone(),
                            args: vec![Term::Const(sym(key))],
                        },
                        dist: DistExpr::Val(v.to_term()),
                        body: Vec::new(),
                        span: Span::default(),
                    }),
                    Cell::Missing => out.missing.push(cell_ref),
                    Cell::Query => out.query.push(cell_ref),
                }
            }
        }
    }
    out
}

/// Flags the selected cells as query cells. Cells holding observed values
/// are rejected.
pub fn mark_query_cells(
    bundle: &TableBundle,
    selections: &[CellRef],
) -> Result<TableBundle, Error> {
    let mut out = bundle.clone();
    for sel in selections {
        let cell = out.cell_mut(sel)?;
        if let Cell::Observed(_) = cell {
            return Err(Error::CellAlreadyObserved {
                attr: sel.attr.to_string(),
                key: sel.key.clone(),
            });
        }
        *cell = Cell::Query;
    }
    Ok(out)
}

/// Rebuilds a bundle from facts and cell lists, inverting
/// [`transform_tables`] up to row order.
pub fn reconstruct_tables(
    schema: &TableSchema,
    facts: &Program,
    missing: &[CellRef],
    query: &[CellRef],
) -> Result<TableBundle, Error> {
    let mut entities: Vec<EntityRows> = schema
        .entities
        .iter()
        .map(|t| EntityRows { name: t.name.clone(), keys: Vec::new(), cells: Vec::new() })
        .collect();
    let mut links: Vec<LinkRows> = schema
        .links
        .iter()
        .map(|t| LinkRows { name: t.name.clone(), pairs: Vec::new() })
        .collect();
    let const_arg = |atom: &Atom, i: usize| -> Result<String, Error> {
        match &atom.args[i] {
            Term::Const(c) => Ok(c.to_string()),
            other => Err(Error::TypeMismatch(format!(
                "fact argument {} is not a constant",
                other
            ))),
        }
    };
    for clause in facts.def_clauses() {
        if !clause.body.is_empty() {
            continue;
        }
        if let Some(rows) = entities.iter_mut().find(|e| e.name == clause.head.pred) {
            let table = schema.entity(&rows.name).unwrap();
            rows.keys.push(const_arg(&clause.head, 0)?);
            rows.cells.push(vec![Cell::Missing; table.attributes.len()]);
        } else if let Some(rows) = links.iter_mut().find(|l| l.name == clause.head.pred) {
            pairs_push(rows, const_arg(&clause.head, 0)?, const_arg(&clause.head, 1)?);
        }
    }
    let mut bundle = TableBundle { schema: schema.clone(), entities, links };
    for clause in facts.dist_clauses() {
        if !clause.body.is_empty() {
            continue;
        }
        let Some((_, _)) = schema.attribute(&clause.head.pred) else {
            continue;
        };
        let DistExpr::Val(term) = &clause.dist else {
            return Err(Error::TypeMismatch(format!(
                "attribute fact {} is not a point value",
                clause.head
            )));
        };
        let value = Value::from_term(term).ok_or_else(|| {
            Error::TypeMismatch(format!("attribute fact {} has a non-ground value", clause.head))
        })?;
        let (table, _) = schema.attribute(&clause.head.pred).unwrap();
        let cell_ref = CellRef {
            table: table.name.clone(),
            key: const_arg(&clause.head, 0)?,
            attr: clause.head.pred.clone(),
        };
        *bundle.cell_mut(&cell_ref)? = Cell::Observed(value);
    }
    for cell_ref in query {
        *bundle.cell_mut(cell_ref)? = Cell::Query;
    }
    for cell_ref in missing {
        let cell = bundle.cell_mut(cell_ref)?;
        if matches!(cell, Cell::Observed(_)) {
            return Err(Error::CellAlreadyObserved {
                attr: cell_ref.attr.to_string(),
                key: cell_ref.key.clone(),
            });
        }
        *cell = Cell::Missing;
    }
    Ok(bundle)
}

fn pairs_push(rows: &mut LinkRows, k1: String, k2: String) {
    rows.pairs.push((k1, k2));
}

/// Writes a cell list as `table,key,attribute` CSV.
pub fn cells_to_csv(cells: &[CellRef]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "key", "attribute"]).unwrap();
    for c in cells {
        w.write_record([c.table.as_ref(), c.key.as_str(), c.attr.as_ref()]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Reads a `table,key,attribute` CSV back into cell references.
pub fn cells_from_csv(text: &str) -> Result<Vec<CellRef>, Error> {
    let (headers, rows) = read_records("cells", text)?;
    if headers != ["table", "key", "attribute"] {
        return Err(malformed(
            "cells",
            "expected header `table,key,attribute`".to_string(),
        ));
    }
    Ok(rows
        .into_iter()
        .map(|r| CellRef { table: sym(r[0].trim()), key: r[1].trim().to_string(), attr: sym(r[2].trim()) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{validate_program, Severity};

    fn table1_bias() -> &'static str {
        "type(client(c)). type(account(a)). type(loan(l)).
         type(hasAcc(c,a)). type(hasLoan(a,l)).
         type(age(c)). type(creditScore(c)).
         type(savings(a)). type(freq(a)).
         type(loanAmt(l)). type(status(l)).
         rand(age,continuous,[]). rand(creditScore,continuous,[]).
         rand(savings,continuous,[]). rand(freq,discrete,[low,high]).
         rand(loanAmt,continuous,[]). rand(status,discrete,[appr,pend,decl])."
    }

    fn table1_csvs() -> IndexMap<Sym, String> {
        let mut m = IndexMap::new();
        m.insert(
            sym("client"),
            "cliId,age,creditScore\nann,33,-\nbob,40,500\ncarl,-,450\njohn,55,700\n".to_string(),
        );
        m.insert(
            sym("account"),
            "accId,savings,freq\na_10,3050,high\na_11,-,low\na_19,3010,?\na_20,?,?\n".to_string(),
        );
        m.insert(
            sym("loan"),
            "loanId,loanAmt,status\nl_20,20050,appr\nl_21,-,pend\nl_31,25000,decl\nl_41,10000,-\n"
                .to_string(),
        );
        m.insert(
            sym("hasAcc"),
            "cliId,accId\nann,a_11\nbob,a_11\nann,a_20\njohn,a_10\n".to_string(),
        );
        m.insert(
            sym("hasLoan"),
            "accId,loanId\na_11,l_20\na_10,l_20\na_20,l_31\na_20,l_41\n".to_string(),
        );
        m
    }

    fn table1_bundle() -> TableBundle {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        TableBundle::from_csv_strings(&bias.schema, &table1_csvs()).unwrap()
    }

    #[test]
    fn schema_is_derived_from_type_and_rand_declarations() {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        assert_eq!(bias.schema.entities.len(), 3);
        assert_eq!(bias.schema.links.len(), 2);
        let client = bias.schema.entity("client").unwrap();
        assert_eq!(client.entity_type, sym("c"));
        let names: Vec<&str> =
            client.attributes.iter().map(|a| a.name.as_ref()).collect();
        assert_eq!(names, ["age", "creditScore"]);
        let has_acc = &bias.schema.links[0];
        assert_eq!((has_acc.from.as_ref(), has_acc.to.as_ref()), ("client", "account"));
    }

    #[test]
    fn transform_emits_the_documented_facts() {
        let t = transform_tables(&table1_bundle());
        let program = t.to_program().to_string();
        assert!(program.contains("client(ann)."), "{program}");
        assert!(program.contains("hasAcc(ann,a_11)."), "{program}");
        assert!(program.contains("age(ann) ~ val(33)."), "{program}");
        assert!(!program.contains("creditScore(ann)"), "{program}");
        assert!(t.missing.contains(&CellRef {
            table: sym("client"),
            key: "ann".into(),
            attr: sym("creditScore"),
        }));
        assert!(t.query.contains(&CellRef {
            table: sym("account"),
            key: "a_20".into(),
            attr: sym("savings"),
        }));
    }

    #[test]
    fn cell_counts_partition_the_attribute_cells() {
        let bundle = table1_bundle();
        let t = transform_tables(&bundle);
        let total: usize = bundle
            .entities
            .iter()
            .map(|e| e.cells.iter().map(Vec::len).sum::<usize>())
            .sum();
        assert_eq!(total, 24);
        assert_eq!(t.attribute_facts.len() + t.missing.len() + t.query.len(), total);
        assert_eq!(t.attribute_facts.len(), 16);
        assert_eq!(t.query.len(), 3);
        assert_eq!(t.missing.len(), 5);
    }

    #[test]
    fn emitted_facts_parse_and_validate() {
        let t = transform_tables(&table1_bundle());
        let text = t.to_program().to_string();
        let reparsed = parse_program(&text).unwrap();
        let diags = validate_program(&reparsed);
        assert!(
            diags.iter().all(|d| d.severity != Severity::Error),
            "{diags:?}"
        );
        assert_eq!(reparsed.def_clauses().count(), 20);
        assert_eq!(reparsed.dist_clauses().count(), 16);
    }

    #[test]
    fn transform_round_trips_through_reconstruction() {
        let bundle = table1_bundle();
        let t = transform_tables(&bundle);
        let rebuilt =
            reconstruct_tables(&bundle.schema, &t.to_program(), &t.missing, &t.query).unwrap();
        assert_eq!(rebuilt, bundle);
    }

    #[test]
    fn csv_serialization_round_trips() {
        let bundle = table1_bundle();
        let texts: IndexMap<Sym, String> = bundle
            .to_csv_strings()
            .into_iter()
            .map(|(name, text)| (sym(name.trim_end_matches(".csv")), text))
            .collect();
        let reloaded = TableBundle::from_csv_strings(&bundle.schema, &texts).unwrap();
        assert_eq!(reloaded, bundle);
    }

    #[test]
    fn empty_bundle_transforms_to_empty_outputs() {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        let mut tables = IndexMap::new();
        for t in &bias.schema.entities {
            tables.insert(t.name.clone(), format!("{},x,y\n", t.name));
        }
        let mut fixed = IndexMap::new();
        fixed.insert(sym("client"), "cliId,age,creditScore\n".to_string());
        fixed.insert(sym("account"), "accId,savings,freq\n".to_string());
        fixed.insert(sym("loan"), "loanId,loanAmt,status\n".to_string());
        let bundle = TableBundle::from_csv_strings(&bias.schema, &fixed).unwrap();
        let t = transform_tables(&bundle);
        assert!(t.entity_facts.is_empty());
        assert!(t.link_facts.is_empty());
        assert!(t.attribute_facts.is_empty());
        assert!(t.missing.is_empty());
        assert!(t.query.is_empty());
    }

    #[test]
    fn dangling_foreign_key_is_reported_with_coordinates() {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        let mut csvs = table1_csvs();
        csvs.insert(
            sym("hasAcc"),
            "cliId,accId\nann,a_11\neve,a_11\n".to_string(),
        );
        let err = TableBundle::from_csv_strings(&bias.schema, &csvs).unwrap_err();
        match err {
            Error::DanglingForeignKey { table, row, value, target } => {
                assert_eq!(table, "hasAcc");
                assert_eq!(row, 2);
                assert_eq!(value, "eve");
                assert_eq!(target, "client");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        let mut csvs = table1_csvs();
        csvs.insert(
            sym("client"),
            "cliId,age,creditScore\nann,33,-\nann,40,500\n".to_string(),
        );
        let err = TableBundle::from_csv_strings(&bias.schema, &csvs).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { .. }), "{err}");
    }

    #[test]
    fn out_of_domain_labels_are_rejected() {
        let bias = BiasSpec::parse(table1_bias()).unwrap();
        let mut csvs = table1_csvs();
        csvs.insert(
            sym("account"),
            "accId,savings,freq\na_10,3050,weekly\n".to_string(),
        );
        let err = TableBundle::from_csv_strings(&bias.schema, &csvs).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
    }

    #[test]
    fn figure_declarations_with_modes_parse_and_check() {
        let text = format!(
            "{}
             type(cliLoan(c,l)).
             mode(age,none,creditScore(+)).
             mode(age,sum,(hasAcc(+,-),savings(+))).
             mode(age,avg,(hasAcc(+,-),savings(+))).
             mode(age,mod,(hasAcc(+,-),freq(+))).
             mode(age,max,(cliLoan(+,-),loanAmt(+))).
             mode(age,mod,(cliLoan(-,-),status(+))).
             mode(status,none,loanAmt(+)).
             rank([age,creditScore,loanAmt,status,savings,freq]).",
            table1_bias()
        );
        let bias = BiasSpec::parse(&text).unwrap();
        assert_eq!(bias.modes.len(), 7);
        assert_eq!(bias.rank.as_ref().unwrap().len(), 6);
        assert_eq!(bias.modes[3].agg, Some(AggOp::Mod));
    }

    #[test]
    fn mode_with_wrong_entity_type_is_rejected() {
        let text = format!("{} mode(age,none,freq(+)).", table1_bias());
        let err = BiasSpec::parse(&text).unwrap_err();
        match err {
            Error::ModeType { target, .. } => assert_eq!(target, "age"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rank_without_rand_declaration_is_rejected() {
        let err = BiasSpec::parse("type(client(c)). type(age(c)). rank([age]).").unwrap_err();
        assert!(matches!(err, Error::UnknownAttribute(_)), "{err}");
    }

    #[test]
    fn marking_a_missing_cell_makes_it_a_query_cell() {
        let bundle = table1_bundle();
        let sel = CellRef { table: sym("client"), key: "ann".into(), attr: sym("creditScore") };
        let marked = mark_query_cells(&bundle, std::slice::from_ref(&sel)).unwrap();
        let t = transform_tables(&marked);
        assert!(t.query.contains(&sel));
        assert!(!t.missing.contains(&sel));
    }

    #[test]
    fn marking_nothing_leaves_the_bundle_unchanged() {
        let bundle = table1_bundle();
        assert_eq!(mark_query_cells(&bundle, &[]).unwrap(), bundle);
    }

    #[test]
    fn marking_an_observed_cell_is_rejected() {
        let bundle = table1_bundle();
        let sel = CellRef { table: sym("client"), key: "bob".into(), attr: sym("age") };
        let err = mark_query_cells(&bundle, std::slice::from_ref(&sel)).unwrap_err();
        assert!(matches!(err, Error::CellAlreadyObserved { .. }), "{err}");
    }

    #[test]
    fn cell_lists_round_trip_through_csv() {
        let t = transform_tables(&table1_bundle());
        let text = cells_to_csv(&t.missing);
        assert_eq!(cells_from_csv(&text).unwrap(), t.missing);
    }
}
