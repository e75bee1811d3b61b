//! Gnuplot scripts that render the CSV artifacts next to them.

use std::fmt::Write;

/// One curve of a plot: a CSV file and the columns to draw.
pub struct Series {
    pub file: String,
    pub x: usize,
    pub y: usize,
    pub title: String,
    pub style: &'static str,
}

impl Series {
    pub fn new(file: impl Into<String>, x: usize, y: usize, title: impl Into<String>) -> Self {
        Series {
            file: file.into(),
            x,
            y,
            title: title.into(),
            style: "lines",
        }
    }

    pub fn with_style(mut self, style: &'static str) -> Self {
        self.style = style;
        self
    }
}

/// Script for `gnuplot <stem>.gp`, writing `<stem>.png`. Paths are relative
/// to the script's directory.
pub fn gnuplot_script(stem: &str, xlabel: &str, ylabel: &str, log_x: bool, series: &[Series]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output '{stem}.png'");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    if log_x {
        let _ = writeln!(s, "set logscale x");
    }
    let parts: Vec<String> = series
        .iter()
        .map(|c| {
            format!(
                "'{}' using {}:{} with {} title '{}'",
                c.file, c.x, c.y, c.style, c.title
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
    s
}
