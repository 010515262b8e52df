/** three.js viewport: renders the mesh JSON returned by the service. The
 * geometry arrays are uploaded verbatim; nothing is recomputed here except
 * what the GPU needs for display. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

import type { MeshJson } from "./api.js";

export class MeshViewer {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private controls: OrbitControls;
  private meshObject: THREE.Mesh | null = null;
  private material: THREE.MeshStandardMaterial;

  constructor(container: HTMLElement) {
    const width = container.clientWidth || 640;
    const height = container.clientHeight || 480;
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(width, height);
    container.appendChild(this.renderer.domElement);

    this.camera = new THREE.PerspectiveCamera(45, width / height, 0.01, 100);
    this.camera.position.set(0, 0.5, 3);
    this.controls = new OrbitControls(this.camera, this.renderer.domElement);

    this.scene.background = new THREE.Color(0x202228);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.5));
    const key = new THREE.DirectionalLight(0xffffff, 1.2);
    key.position.set(2, 2, 3);
    this.scene.add(key);

    this.material = new THREE.MeshStandardMaterial({
      color: 0xd8c0a8,
      roughness: 0.75,
    });

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  setTextureEnabled(enabled: boolean, texture?: THREE.Texture): void {
    this.material.map = enabled && texture ? texture : null;
    this.material.needsUpdate = true;
  }

  showMesh(mesh: MeshJson): void {
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute(
      "position",
      new THREE.Float32BufferAttribute(mesh.vertices.flat(), 3),
    );
    geometry.setAttribute(
      "normal",
      new THREE.Float32BufferAttribute(mesh.normals.flat(), 3),
    );
    geometry.setIndex(mesh.faces.flat());

    if (this.meshObject) {
      this.scene.remove(this.meshObject);
      this.meshObject.geometry.dispose();
    }
    this.meshObject = new THREE.Mesh(geometry, this.material);
    this.scene.add(this.meshObject);

    geometry.computeBoundingSphere();
    const sphere = geometry.boundingSphere;
    if (sphere) {
      this.controls.target.copy(sphere.center);
      this.camera.position
        .copy(sphere.center)
        .add(new THREE.Vector3(0, 0, sphere.radius * 3));
    }
  }
}
