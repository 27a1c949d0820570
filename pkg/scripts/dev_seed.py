"""Write a small synthetic dataset and one session JSON for local runs."""
import json
from pathlib import Path

from app.core.config import WorldConfig, settings
from app.services.data import write_sessions_csv
from app.services.synthetic import generate_synthetic

DEMO_WORLD = WorldConfig(n_users=20, n_items=60, n_sessions=200, n_topics=4, history_len=8)
DEMO_LENGTH = 4


def main():
    out = Path(settings.data_dir) / "demo"
    train, test = generate_synthetic(DEMO_WORLD, DEMO_LENGTH, settings.seed)
    write_sessions_csv(out / "train", train)
    write_sessions_csv(out / "test", test)

    first = test[0]
    session = {
        "session_id": first.session_id,
        "items": list(first.displayed.items),
        "history": list(first.history),
    }
    (out / "session.json").write_text(json.dumps(session, indent=2) + "\n", encoding="utf-8")
    print(f"Seeded {len(train)} train / {len(test)} test sessions into {out}")


if __name__ == "__main__":
    main()
