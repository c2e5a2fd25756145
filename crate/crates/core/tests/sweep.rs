use star_memory::harness::{sweep_ablation, write_sweep_csv, GridSpec, SweepOptions, DEFAULT_GRID};
use star_memory::{MemoryConfig, SynthSpec};

#[test]
fn ablation_cells_hold_their_budgets() {
    let grid: GridSpec = DEFAULT_GRID.parse().unwrap();
    let options = SweepOptions {
        frames: 60,
        queries: 4,
        synth: SynthSpec {
            grid: 16,
            dim: 4,
            ..SynthSpec::default()
        },
    };
    let rows = sweep_ablation(&MemoryConfig::default(), &grid, &options).unwrap();
    assert_eq!(rows.len(), 10);
    let budgets: Vec<usize> = rows.iter().map(|r| r.budget).collect();
    assert_eq!(budgets, vec![1449, 489, 1881, 306, 1056, 681, 800, 528, 392, 681]);
    for row in &rows {
        assert_eq!(row.status, "ok", "{row:?}");
        assert!(row.invariants_ok, "{row:?}");
        assert_eq!(row.observed_tokens, row.budget);
    }

    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 11);
}
