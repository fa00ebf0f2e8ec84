use proptest::prelude::*;

use scl_cli::bundle::{emit_report, Bundle, Cell, CommandResult, Format, Table};
use scl_cli::scenario::Command;

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        any::<bool>().prop_map(Cell::Bool),
        any::<i64>().prop_map(Cell::Int),
        any::<f64>().prop_map(Cell::from),
        "[a-z ,\"]{0,12}".prop_map(Cell::Text),
    ]
}

fn result() -> impl Strategy<Value = CommandResult> {
    (
        prop::sample::select(Command::ALL.to_vec()),
        prop::collection::btree_map("[a-z_]{1,8}", cell(), 0..5),
        prop::collection::vec(prop::collection::vec(cell(), 3), 0..6),
        any::<bool>(),
    )
        .prop_map(|(command, summary, rows, ok)| {
            let mut r = CommandResult::new(command);
            r.summary = summary;
            r.check("ok", ok);
            let mut t = Table::new("t", &["a", "b", "c"]);
            for row in rows {
                t.push(row);
            }
            r.tables.push(t);
            r
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundles_survive_json(results in prop::collection::vec(result(), 0..4), seed in any::<u64>()) {
        let bundle = Bundle { scenario: "p".into(), seed, results };
        prop_assert_eq!(Bundle::from_json(&bundle.to_json()).unwrap(), bundle);
    }

    #[test]
    fn csv_tables_keep_their_shape(results in prop::collection::vec(result(), 1..3)) {
        let dir = tempfile::tempdir().unwrap();
        let bundle = Bundle { scenario: "p".into(), seed: 0, results };
        emit_report(&bundle, Format::Csv, dir.path()).unwrap();
        let last = bundle.results.last().unwrap();
        let path = dir.path().join(format!("{}-t.csv", last.command.name()));
        let mut reader = csv::Reader::from_path(path).unwrap();
        prop_assert_eq!(reader.headers().unwrap().len(), 3);
        let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
        prop_assert_eq!(rows.len(), last.tables[0].rows.len());
    }
}
