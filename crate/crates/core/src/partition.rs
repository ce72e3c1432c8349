//! Multi-level geocell partitionings.
//!
//! A partitioning file is UTF-8 CSV with the header
//! `level,cell_id,parent_id,lat,lng`. `parent_id` is empty at level 0 and
//! rows may appear in any order. Within a level, cells keep the order in which
//! they first appear in the file; that order is the class order that
//! [`CellProbabilities`](crate::decode::CellProbabilities) vectors align with.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{GeoError, Result};
use crate::geo::GeoCoordinate;

const HEADER: [&str; 5] = ["level", "cell_id", "parent_id", "lat", "lng"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeoCell {
    pub id: String,
    pub level: usize,
    pub parent_id: Option<String>,
    pub centroid: GeoCoordinate,
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    cells: Vec<GeoCell>,
    index: HashMap<String, usize>,
}

/// Coarse-to-fine list of partitionings. The last level is the prediction level.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitioningHierarchy {
    levels: Vec<Level>,
    /// For each level > 0, position of every cell's parent in the level above.
    parents: Vec<Vec<usize>>,
}

impl PartitioningHierarchy {
    /// Builds and validates a hierarchy from cells grouped per level.
    pub fn from_levels(levels: Vec<Vec<GeoCell>>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|l| l.is_empty()) {
            return Err(GeoError::validation(
                "a partitioning needs at least one non-empty level",
            ));
        }
        let mut built: Vec<Level> = Vec::with_capacity(levels.len());
        let mut parents = Vec::with_capacity(levels.len());
        for (depth, cells) in levels.into_iter().enumerate() {
            let mut index = HashMap::with_capacity(cells.len());
            let mut parent_pos = Vec::with_capacity(cells.len());
            for (pos, cell) in cells.iter().enumerate() {
                if cell.level != depth {
                    return Err(GeoError::validation(format!(
                        "cell {} declares level {} but sits at level {depth}",
                        cell.id, cell.level
                    )));
                }
                if index.insert(cell.id.clone(), pos).is_some() {
                    return Err(GeoError::validation(format!(
                        "duplicate cell id {} at level {depth}",
                        cell.id
                    )));
                }
                match (depth, &cell.parent_id) {
                    (0, None) => {}
                    (0, Some(p)) => {
                        return Err(GeoError::validation(format!(
                            "level-0 cell {} has parent {p}",
                            cell.id
                        )))
                    }
                    (_, None) => {
                        return Err(GeoError::validation(format!(
                            "cell {} at level {depth} has no parent",
                            cell.id
                        )))
                    }
                    (_, Some(p)) => {
                        let above = &built[depth - 1];
                        let Some(&ppos) = above.index.get(p) else {
                            return Err(GeoError::validation(format!(
                                "cell {} references missing parent {p} at level {}",
                                cell.id,
                                depth - 1
                            )));
                        };
                        parent_pos.push(ppos);
                    }
                }
            }
            built.push(Level { cells, index });
            parents.push(parent_pos);
        }
        Ok(Self {
            levels: built,
            parents,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Cells of `level` in class order.
    pub fn cells(&self, level: usize) -> &[GeoCell] {
        &self.levels[level].cells
    }

    pub fn level_len(&self, level: usize) -> usize {
        self.levels[level].cells.len()
    }

    pub fn finest_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn cell(&self, level: usize, id: &str) -> Option<&GeoCell> {
        let l = self.levels.get(level)?;
        l.index.get(id).map(|&i| &l.cells[i])
    }

    /// Position of the parent of cell `pos` at `level` (which must be > 0).
    pub(crate) fn parent_position(&self, level: usize, pos: usize) -> usize {
        self.parents[level][pos]
    }

    /// Ancestor positions of a finest-level cell, coarsest first, ending with the
    /// cell itself.
    pub fn ancestor_positions(&self, finest_pos: usize) -> Vec<usize> {
        let mut chain = vec![finest_pos];
        let mut pos = finest_pos;
        for level in (1..self.levels.len()).rev() {
            pos = self.parent_position(level, pos);
            chain.push(pos);
        }
        chain.reverse();
        chain
    }

    /// Parses a partitioning file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);

        let mut records = rdr.records();
        match records.next() {
            Some(Ok(header)) if header.iter().eq(HEADER.iter().copied()) => {}
            Some(Ok(_)) => {
                return Err(GeoError::parse(
                    1,
                    format!("expected header `{}`", HEADER.join(",")),
                ))
            }
            Some(Err(e)) => return Err(GeoError::parse(1, e.to_string())),
            None => return Err(GeoError::parse(1, "empty partitioning file")),
        }

        // (line, cell)
        let mut rows: Vec<(usize, GeoCell)> = Vec::new();
        for record in records {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                GeoError::parse(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != HEADER.len() {
                return Err(GeoError::parse(
                    line,
                    format!("expected {} fields, found {}", HEADER.len(), record.len()),
                ));
            }
            let level: usize = record[0]
                .parse()
                .map_err(|_| GeoError::parse(line, format!("bad level `{}`", &record[0])))?;
            let id = record[1].to_string();
            if id.is_empty() {
                return Err(GeoError::parse(line, "empty cell_id"));
            }
            let parent_id = (!record[2].is_empty()).then(|| record[2].to_string());
            let lat: f64 = record[3]
                .parse()
                .map_err(|_| GeoError::parse(line, format!("bad lat `{}`", &record[3])))?;
            let lng: f64 = record[4]
                .parse()
                .map_err(|_| GeoError::parse(line, format!("bad lng `{}`", &record[4])))?;
            let centroid =
                GeoCoordinate::new(lat, lng).map_err(|e| GeoError::parse(line, e.to_string()))?;
            rows.push((
                line,
                GeoCell {
                    id,
                    level,
                    parent_id,
                    centroid,
                },
            ));
        }

        let depth = rows.iter().map(|(_, c)| c.level + 1).max().unwrap_or(0);
        if depth == 0 {
            return Err(GeoError::parse(2, "partitioning file has no cells"));
        }
        let mut levels: Vec<Vec<GeoCell>> = vec![Vec::new(); depth];
        let mut seen: Vec<HashMap<String, usize>> = vec![HashMap::new(); depth];
        for (line, cell) in &rows {
            if let Some(first) = seen[cell.level].insert(cell.id.clone(), *line) {
                return Err(GeoError::parse(
                    *line,
                    format!(
                        "duplicate cell id {} at level {} (first seen on line {first})",
                        cell.id, cell.level
                    ),
                ));
            }
            levels[cell.level].push(cell.clone());
        }
        if let Some(missing) = levels.iter().position(|l| l.is_empty()) {
            return Err(GeoError::parse(
                rows.last().map_or(2, |(l, _)| *l),
                format!("level {missing} has no cells"),
            ));
        }
        for (line, cell) in &rows {
            match (&cell.parent_id, cell.level) {
                (Some(_), 0) => {
                    return Err(GeoError::parse(*line, "level-0 cell must not have a parent"))
                }
                (None, l) if l > 0 => {
                    return Err(GeoError::parse(*line, format!("cell {} lacks a parent", cell.id)))
                }
                (Some(p), l) if !seen[l - 1].contains_key(p) => {
                    return Err(GeoError::parse(
                        *line,
                        format!("cell {} references missing parent {p}", cell.id),
                    ))
                }
                _ => {}
            }
        }
        Self::from_levels(levels)
    }

    /// Writes the hierarchy in the partitioning file format, level by level.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| GeoError::Io(e.to_string());
        wtr.write_record(HEADER).map_err(io)?;
        for level in &self.levels {
            for cell in &level.cells {
                wtr.write_record([
                    cell.level.to_string(),
                    cell.id.clone(),
                    cell.parent_id.clone().unwrap_or_default(),
                    cell.centroid.lat().to_string(),
                    cell.centroid.lng().to_string(),
                ])
                .map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}
