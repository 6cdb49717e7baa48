# -*- coding: utf-8 -*-
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from utils import config_hash, file_digest, write_json


MANIFEST = "manifest.json"


class RunManager:
    """Менеджер выходных каталогов: один каталог на прогон, запись однократная"""

    def __init__(self, out_root: Path, silent: bool = False):
        self.out_root = Path(out_root)
        self.silent = silent

    def create_run(self, kind: str) -> Path:
        """
        Создание нового каталога прогона (simulate-000, simulate-001, ...)

        Args:
            kind: Имя подкоманды

        Returns:
            Путь к новому каталогу
        """
        self.out_root.mkdir(parents=True, exist_ok=True)
        index = 0
        while True:
            run_dir = self.out_root / f"{kind}-{index:03d}"
            try:
                run_dir.mkdir()
                break
            except FileExistsError:
                index += 1

        if not self.silent:
            print(f"📂 Каталог прогона: {run_dir}")
        return run_dir

    def write_manifest(self, run_dir: Path, config: Dict, seed: Optional[int],
                       argv: Optional[List[str]] = None, inputs: Optional[List[Path]] = None) -> Path:
        """Манифест воспроизводимости: хэш конфига, seed, argv и дайджесты входов"""
        manifest = {
            "name": run_dir.name,
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "config_hash": config_hash(config),
            "seed": seed,
            "argv": list(argv if argv is not None else sys.argv[1:]),
            "inputs": {},
            "outputs": {},
        }
        for path in inputs or []:
            path = Path(path)
            if path.is_file():
                manifest["inputs"][str(path)] = file_digest(path)
            elif path.is_dir():
                for item in sorted(p for p in path.rglob("*") if p.is_file()):
                    manifest["inputs"][str(item)] = file_digest(item)

        manifest_path = run_dir / MANIFEST
        write_json(manifest_path, manifest)
        return manifest_path

    def record_outputs(self, run_dir: Path) -> Dict[str, str]:
        """Дописать в манифест дайджесты всех выходных файлов"""
        manifest = self.get_manifest(run_dir)
        outputs = {
            str(p.relative_to(run_dir)): file_digest(p)
            for p in sorted(run_dir.rglob("*"))
            if p.is_file() and p.name != MANIFEST
        }
        manifest["outputs"] = outputs
        write_json(run_dir / MANIFEST, manifest)
        if not self.silent:
            print(f"💾 Сохранено файлов: {len(outputs)}")
        return outputs

    def get_manifest(self, run_dir: Path) -> Dict:
        manifest_path = Path(run_dir) / MANIFEST
        if not manifest_path.exists():
            raise FileNotFoundError(f"Манифест не найден: {manifest_path}")
        with open(manifest_path, "r", encoding="utf-8") as f:
            return json.load(f)
