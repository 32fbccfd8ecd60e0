"""Write the scripted attack schedules to scenarios/*.json."""

from pathlib import Path

from fido2d.devices import UserMode
from fido2d.harness import scenarios

OUT = Path(__file__).resolve().parent.parent / "scenarios"


def main() -> None:
    built = {
        "honest": scenarios.honest(),
        "manipulation_no_compare": scenarios.manipulation(mode=UserMode.NO_COMPARE),
        "manipulation_compare": scenarios.manipulation(mode=UserMode.COMPARE),
        "initiation": scenarios.initiation(),
        "dual_compromise": scenarios.dual_compromise(),
        "phishing_relay": scenarios.phishing_relay(),
        "replay": scenarios.replay()[0],
    }
    OUT.mkdir(exist_ok=True)
    for name, schedule in built.items():
        (OUT / f"{name}.json").write_text(schedule.to_json() + "\n")
        print(f"wrote scenarios/{name}.json ({len(schedule.steps)} steps)")


if __name__ == "__main__":
    main()
