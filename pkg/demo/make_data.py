"""Write the toy detection and span corpora used by demo.toml."""
from pathlib import Path

from cfdetect import synthetic
from cfdetect.corpus import write_detection_data, write_span_data

here = Path(__file__).parent
write_detection_data(here / "detect.csv", synthetic.detection_corpus(40, seed=0))
write_span_data(here / "spans.csv", synthetic.span_corpus(40, seed=0))
print(f"wrote {here / 'detect.csv'} and {here / 'spans.csv'}")
