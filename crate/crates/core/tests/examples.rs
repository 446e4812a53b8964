//! Runs every example end to end so they cannot rot.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(watermark_and_detect);
example!(substring_crop);
example!(simple_rejection);
example!(ngram_text);
example!(removal_attack);
example!(run_experiment);
example!(undetectability);
example!(prf_throughput);
