//! Result tables (CSV, Markdown, aligned text) and confusion-matrix output.

use std::path::Path;

use crate::error::{Error, Result};

/// Rows are method/ablation variants, columns are tasks plus a trailing
/// average; cells are accuracy percentages.
#[derive(Debug, Clone)]
pub struct ReportTable {
    pub title: String,
    pub row_names: Vec<String>,
    pub task_names: Vec<String>,
    /// One row per variant, `task_names.len() + 1` cells (tasks + average).
    pub cells: Vec<Vec<f64>>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, task_names: Vec<String>) -> Self {
        ReportTable {
            title: title.into(),
            row_names: vec![],
            task_names,
            cells: vec![],
        }
    }

    /// Appends a row of per-task accuracies; the average column is derived.
    pub fn push_row(&mut self, name: impl Into<String>, per_task: Vec<f64>) -> Result<()> {
        if per_task.len() != self.task_names.len() {
            return Err(Error::Shape(format!(
                "row has {} cells for {} tasks",
                per_task.len(),
                self.task_names.len()
            )));
        }
        let avg = per_task.iter().sum::<f64>() / per_task.len() as f64;
        let mut row = per_task;
        row.push(avg);
        self.row_names.push(name.into());
        self.cells.push(row);
        Ok(())
    }

    pub fn average(&self, row: usize) -> f64 {
        *self.cells[row].last().expect("rows always carry an average")
    }

    /// The stored average column always equals the recomputed mean.
    pub fn verify_averages(&self) -> Result<()> {
        for (i, row) in self.cells.iter().enumerate() {
            let tasks = &row[..row.len() - 1];
            let mean = tasks.iter().sum::<f64>() / tasks.len() as f64;
            if (mean - row[row.len() - 1]).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "row {i} average {} does not match recomputed {mean}",
                    row[row.len() - 1]
                )));
            }
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["method".to_string()];
        h.extend(self.task_names.iter().cloned());
        h.push("Average".into());
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(self.header())
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for (name, row) in self.row_names.iter().zip(&self.cells) {
            let mut record = vec![name.clone()];
            record.extend(row.iter().map(|v| format!("{v:.2}")));
            w.write_record(&record)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        let header = self.header();
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        out.push_str(&format!(
            "|{}|\n",
            header.iter().map(|_| "---").collect::<Vec<_>>().join("|")
        ));
        for (name, row) in self.row_names.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
            out.push_str(&format!("| {} | {} |\n", name, cells.join(" | ")));
        }
        out
    }

    /// Fixed-width text rendering for terminals and logs.
    pub fn to_aligned_text(&self) -> String {
        let header = self.header();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for (name, row) in self.row_names.iter().zip(&self.cells) {
            widths[0] = widths[0].max(name.len());
            for (j, v) in row.iter().enumerate() {
                widths[j + 1] = widths[j + 1].max(format!("{v:.2}").len());
            }
        }
        let mut out = String::new();
        for (j, h) in header.iter().enumerate() {
            out.push_str(&format!("{:width$}  ", h, width = widths[j]));
        }
        out.push('\n');
        for (name, row) in self.row_names.iter().zip(&self.cells) {
            out.push_str(&format!("{:width$}  ", name, width = widths[0]));
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{:>width$.2}  ", v, width = widths[j + 1]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        let md = self.to_markdown();
        let md_path = dir.join(format!("{stem}.md"));
        std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
        let txt_path = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt_path, self.to_aligned_text()).map_err(|e| Error::io(&txt_path, e))?;
        Ok(())
    }
}

/// Confusion matrix as CSV, rows = true classes.
pub fn write_confusion_csv(confusion: &[Vec<usize>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let classes = confusion.len();
    let mut header = vec!["true\\pred".to_string()];
    header.extend((0..classes).map(|c| c.to_string()));
    w.write_record(&header)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for (c, row) in confusion.iter().enumerate() {
        let mut record = vec![c.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
